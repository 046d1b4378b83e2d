#!/usr/bin/env python3
"""
LLM client tests: request payloads, error mapping, transcripts and prompt templates
"""

import json

import pytest
import requests

from llm_client import (LLMClient, LLMConfig, LLMError, PromptLibrary, TranscribingChat, Transcript, accepts_role,
                        ask)


class FakeResponse:
    def __init__(self, payload, status=200):
        self.payload = payload
        self.status_code = status

    def raise_for_status(self):
        if self.status_code >= 400:
            raise requests.HTTPError(f"{self.status_code} error")

    def json(self):
        if isinstance(self.payload, Exception):
            raise self.payload
        return self.payload


class FakeSession:
    def __init__(self, response):
        self.response = response
        self.requests = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.requests.append({'url': url, 'json': json, 'headers': headers, 'timeout': timeout})
        if isinstance(self.response, Exception):
            raise self.response
        return self.response


def client_with(response, api_key='secret'):
    session = FakeSession(response)
    config = LLMConfig(endpoint='https://llm.example/v1/chat/completions', model='test-model')
    return LLMClient(config, api_key=api_key, session=session), session


def test_chat_returns_first_choice():
    client, session = client_with(FakeResponse({'choices': [{'message': {'content': 'bedroom'}}]}))
    assert client.chat([{'role': 'user', 'content': 'hi'}]) == 'bedroom'
    sent = session.requests[0]
    assert sent['json']['model'] == 'test-model'
    assert sent['json']['temperature'] == 0.0
    assert sent['headers']['Authorization'] == 'Bearer secret'


@pytest.mark.parametrize('response', [
    FakeResponse({}, status=500),
    FakeResponse({'choices': []}),
    FakeResponse({'choices': [{'message': {'content': None}}]}),
    FakeResponse(ValueError('not json')),
    requests.ConnectionError('refused'),
])
def test_failures_become_llm_errors(response):
    client, _ = client_with(response)
    with pytest.raises(LLMError):
        client.chat([{'role': 'user', 'content': 'hi'}])


def test_connection_reports_missing_credentials():
    client, session = client_with(FakeResponse({}), api_key='')
    ok, message = client.test_connection()
    assert not ok
    assert 'not configured' in message
    assert session.requests == []


def test_connection_success():
    client, _ = client_with(FakeResponse({'choices': [{'message': {'content': 'ready'}}]}))
    ok, message = client.test_connection()
    assert ok
    assert message.endswith('ready')


def test_negative_temperature():
    with pytest.raises(ValueError):
        LLMConfig(temperature=-0.1)


def test_transcribing_chat_records_every_exchange(tmp_path):
    client, _ = client_with(FakeResponse({'choices': [{'message': {'content': 'kitchen'}}]}))
    transcript = Transcript('val_0007')
    chat = TranscribingChat(client, transcript)
    assert chat.chat([{'role': 'user', 'content': 'which room?'}], role='room_type') == 'kitchen'

    failing, _ = client_with(FakeResponse({}, status=503))
    with pytest.raises(LLMError):
        TranscribingChat(failing, transcript).chat([{'role': 'user', 'content': 'plan'}], role='planner')

    assert len(transcript) == 2
    assert transcript.entries[0]['role'] == 'room_type'
    assert transcript.entries[1]['response'] is None
    assert transcript.entries[1]['error']

    path = tmp_path / 'transcript.jsonl'
    transcript.write(str(path))
    lines = path.read_text(encoding='utf-8').splitlines()
    assert [json.loads(line)['episode_id'] for line in lines] == ['val_0007', 'val_0007']


class PlainChat:
    def __init__(self, reply='visited', error=None):
        self.reply = reply
        self.error = error
        self.calls = []

    def chat(self, messages):
        self.calls.append(messages)
        if self.error:
            raise self.error
        return self.reply


class KeywordChat:
    def __init__(self):
        self.options = []

    def chat(self, messages, **options):
        self.options.append(options)
        return 'kitchen'


def test_role_reaches_only_clients_that_take_it():
    messages = [{'role': 'user', 'content': 'which room?'}]
    plain = PlainChat()
    assert not accepts_role(plain.chat)
    assert ask(plain, messages, 'tracker') == 'visited'

    transcript = Transcript('val_0003')
    assert ask(TranscribingChat(plain, transcript), messages, 'tracker') == 'visited'
    assert transcript.entries[0]['role'] == 'tracker'

    keyword = KeywordChat()
    assert ask(keyword, messages, 'room_type') == 'kitchen'
    assert keyword.options == [{'role': 'room_type'}]


def test_type_errors_inside_a_client_are_not_retried():
    broken = PlainChat(error=TypeError("unhashable payload"))
    with pytest.raises(TypeError):
        ask(broken, [{'role': 'user', 'content': 'plan'}], 'planner')
    assert len(broken.calls) == 1


def test_prompt_templates_render():
    prompts = PromptLibrary()
    text = prompts.render('feasibility', ROOM_TYPE='kitchen', OBJECTS='spoon, mug')
    assert 'in a kitchen' in text
    assert 'spoon, mug' in text
    assert '{ROOM_TYPE}' not in text
    plan_prompt = prompts.render('search_plan', SUBGRAPH='room r1: bedroom', UNFOUND='book')
    assert plan_prompt.rstrip().endswith('Plan:')
    with pytest.raises(FileNotFoundError):
        prompts.template('missing_prompt')
