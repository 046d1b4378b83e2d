#!/usr/bin/env python3
"""
RoomScout LLM Client
Chat-completion transport for the high-level planner and the room tracker
"""

import inspect
import json
import logging
import os
import threading
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import requests
from requests.adapters import HTTPAdapter
from typing_extensions import Protocol
from urllib3.util.retry import Retry

from config import Config

logger = logging.getLogger(__name__)


class LLMError(Exception):
    """Raised on transport failures or malformed completion payloads"""


class ChatClient(Protocol):
    """Anything with a chat(messages) method returning the reply text"""

    def chat(self, messages: List[Dict[str, str]]) -> str:
        ...


@dataclass(frozen=True)
class LLMConfig:
    endpoint: str = Config.LLM_ENDPOINT
    model: str = Config.LLM_MODEL
    temperature: float = Config.LLM_TEMPERATURE
    max_tokens: int = Config.LLM_MAX_TOKENS
    timeout: float = Config.LLM_TIMEOUT
    retries: int = Config.LLM_RETRIES

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError(f"temperature must be non-negative, got {self.temperature}")

    @classmethod
    def from_config(cls, cfg=Config) -> 'LLMConfig':
        return cls(cfg.LLM_ENDPOINT, cfg.LLM_MODEL, cfg.LLM_TEMPERATURE, cfg.LLM_MAX_TOKENS,
                   cfg.LLM_TIMEOUT, cfg.LLM_RETRIES)


class LLMClient:
    """Chat-completion client, shareable across episode threads"""

    def __init__(self, config: LLMConfig = None, api_key: str = None, session: requests.Session = None,
                 api_key_env: str = Config.LLM_API_KEY_ENV):
        self.config = config or LLMConfig()
        self.api_key = api_key if api_key is not None else os.environ.get(api_key_env, '')
        self.session = session or self._build_session()

    def _build_session(self) -> requests.Session:
        retry = Retry(
            total=self.config.retries,
            backoff_factor=0.5,
            status_forcelist=(429, 500, 502, 503, 504),
            allowed_methods=frozenset(['POST']),
        )
        session = requests.Session()
        adapter = HTTPAdapter(max_retries=retry)
        session.mount('http://', adapter)
        session.mount('https://', adapter)
        return session

    def is_configured(self) -> bool:
        """Check if an endpoint and credential are available"""
        return bool(self.config.endpoint and self.api_key)

    def chat(self, messages: List[Dict[str, str]], episode_id: str = None) -> str:
        """Send one chat-completion request and return the first choice's text"""
        payload = {
            'model': self.config.model,
            'messages': messages,
            'temperature': self.config.temperature,
            'max_tokens': self.config.max_tokens,
        }
        headers = {'Content-Type': 'application/json'}
        if self.api_key:
            headers['Authorization'] = f"Bearer {self.api_key}"
        logger.debug(f"[{episode_id}] LLM request: {json.dumps(messages)[:2000]}")
        try:
            response = self.session.post(self.config.endpoint, json=payload, headers=headers,
                                         timeout=self.config.timeout)
            response.raise_for_status()
            data = response.json()
            content = data['choices'][0]['message']['content']
        except requests.RequestException as e:
            raise LLMError(f"LLM request failed: {e}") from e
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise LLMError(f"Malformed LLM response: {e}") from e
        if not isinstance(content, str):
            raise LLMError("LLM response content is not text")
        logger.debug(f"[{episode_id}] LLM response: {content[:2000]}")
        return content

    def test_connection(self) -> Tuple[bool, str]:
        """Send a one-word request to the endpoint"""
        if not self.is_configured():
            return False, f"LLM credentials not configured (set {Config.LLM_API_KEY_ENV})"
        try:
            logger.info(f"Testing LLM endpoint {self.config.endpoint} with model {self.config.model}")
            reply = self.chat([{'role': 'user', 'content': 'Reply with the single word: ready'}])
            logger.info("✅ LLM connection successful")
            return True, f"LLM connection successful: {reply.strip()[:40]}"
        except LLMError as e:
            error_msg = f"LLM connection failed: {e}"
            logger.error(f"❌ {error_msg}")
            return False, error_msg


class Transcript:
    """Per-episode record of every prompt/response pair"""

    def __init__(self, episode_id: str):
        self.episode_id = episode_id
        self.entries: List[dict] = []
        self._lock = threading.Lock()

    def record(self, role: str, messages: List[Dict[str, str]], response: Optional[str], error: str = None):
        with self._lock:
            self.entries.append({'episode_id': self.episode_id, 'role': role, 'messages': messages,
                                 'response': response, 'error': error})

    def __len__(self) -> int:
        return len(self.entries)

    def write(self, path: str):
        with open(path, 'w', encoding='utf-8') as f:
            for entry in self.entries:
                f.write(json.dumps(entry, sort_keys=True) + "\n")


class TranscribingChat:
    """Wraps a chat client so every exchange lands in the episode transcript"""

    def __init__(self, client: ChatClient, transcript: Transcript):
        self.client = client
        self.transcript = transcript

    def chat(self, messages: List[Dict[str, str]], role: str = 'planner') -> str:
        try:
            if isinstance(self.client, LLMClient):
                response = self.client.chat(messages, episode_id=self.transcript.episode_id)
            else:
                response = self.client.chat(messages)
        except LLMError as e:
            self.transcript.record(role, messages, None, str(e))
            raise
        except Exception as e:
            self.transcript.record(role, messages, None, str(e))
            raise LLMError(str(e)) from e
        self.transcript.record(role, messages, response)
        return response


def accepts_role(chat) -> bool:
    """True when a chat callable takes a role keyword"""
    try:
        parameters = inspect.signature(chat).parameters.values()
    except (TypeError, ValueError):
        return False
    return any(p.name == 'role' or p.kind is inspect.Parameter.VAR_KEYWORD for p in parameters)


def ask(client: ChatClient, messages: List[Dict[str, str]], role: str) -> str:
    """Send messages, tagging them with role for clients that record it"""
    if accepts_role(client.chat):
        return client.chat(messages, role=role)
    return client.chat(messages)


class PromptLibrary:
    """Plain-text templates with {NAME} placeholders"""

    def __init__(self, directory: str = Config.PROMPTS_DIR):
        self.directory = directory
        self._cache: Dict[str, str] = {}

    def template(self, name: str) -> str:
        if name not in self._cache:
            path = os.path.join(self.directory, f"{name}.txt")
            with open(path, 'r', encoding='utf-8') as f:
                self._cache[name] = f.read()
        return self._cache[name]

    def render(self, name: str, **fields) -> str:
        text = self.template(name)
        for key, value in fields.items():
            text = text.replace('{' + key + '}', str(value))
        return text
