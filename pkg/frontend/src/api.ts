/**
 * Thin typed client over the study service HTTP API.
 */

import { Choice, NextResponse, PayloadError, Progress, parseNextResponse, parseProgress } from './types';

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    detail: string,
  ) {
    super(detail);
  }
}

export interface StudyApi {
  createSession(): Promise<{ sessionId: string; progress: Progress }>;
  nextItem(sessionId: string): Promise<NextResponse>;
  submitVote(sessionId: string, itemId: string, choice: Choice): Promise<Progress>;
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export function createApi(base = '', fetchFn?: FetchLike): StudyApi {
  const doFetch: FetchLike = fetchFn ?? ((input, init) => fetch(input, init));

  async function request(path: string, init?: RequestInit): Promise<unknown> {
    let response: Response;
    try {
      response = await doFetch(base + path, init);
    } catch (error) {
      throw new ApiError(0, 'NetworkError', String(error));
    }
    let body: unknown = null;
    try {
      body = await response.json();
    } catch {
      // non-JSON bodies fall through to the status check
    }
    if (!response.ok) {
      const record = (typeof body === 'object' && body !== null ? body : {}) as Record<string, unknown>;
      const code = typeof record.error === 'string' ? record.error : 'HttpError';
      const detail = typeof record.detail === 'string' ? record.detail : `HTTP ${response.status}`;
      throw new ApiError(response.status, code, detail);
    }
    return body;
  }

  return {
    async createSession() {
      const data = await request('/sessions', { method: 'POST' });
      if (typeof data !== 'object' || data === null) {
        throw new PayloadError('session response is not an object');
      }
      const record = data as Record<string, unknown>;
      if (typeof record.session_id !== 'string') {
        throw new PayloadError('session response is missing session_id');
      }
      return { sessionId: record.session_id, progress: parseProgress(record.progress) };
    },

    async nextItem(sessionId: string) {
      return parseNextResponse(await request(`/sessions/${encodeURIComponent(sessionId)}/next`));
    },

    async submitVote(sessionId: string, itemId: string, choice: Choice) {
      const data = await request(`/sessions/${encodeURIComponent(sessionId)}/votes`, {
        method: 'POST',
        headers: { 'Content-Type': 'application/json' },
        body: JSON.stringify({ item_id: itemId, choice }),
      });
      const record = (typeof data === 'object' && data !== null ? data : {}) as Record<string, unknown>;
      return parseProgress(record.progress);
    },
  };
}
