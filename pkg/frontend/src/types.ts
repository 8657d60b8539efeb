/**
 * Wire types for the preference study API, plus strict payload parsing.
 *
 * Parsing is allow-list based: a field outside the documented schema is a
 * hard error. The service is supposed to strip model identities before
 * anything reaches the browser; if one ever slipped in, the page would
 * refuse the payload instead of rendering it.
 */

export interface Progress {
  voted: number;
  total: number;
}

export interface SessionItem {
  item_id: string;
  image: string;
  true_class: string;
  question: string;
  slot_a: string;
  slot_b: string;
  progress: Progress;
}

export type NextResponse = ({ done: false } & SessionItem) | { done: true; progress: Progress };

export type Choice = 'A' | 'B';

export class PayloadError extends Error {}

const PROGRESS_KEYS = ['voted', 'total'];
const ITEM_KEYS = ['done', 'item_id', 'image', 'true_class', 'question', 'slot_a', 'slot_b', 'progress'];
const DONE_KEYS = ['done', 'progress'];

function asRecord(data: unknown, what: string): Record<string, unknown> {
  if (typeof data !== 'object' || data === null || Array.isArray(data)) {
    throw new PayloadError(`${what} is not an object`);
  }
  return data as Record<string, unknown>;
}

function rejectUnknownKeys(obj: Record<string, unknown>, allowed: string[], what: string): void {
  // report field names only, never values
  const extra = Object.keys(obj).filter((key) => !allowed.includes(key));
  if (extra.length > 0) {
    throw new PayloadError(`${what} carries fields outside the schema: ${extra.sort().join(', ')}`);
  }
}

function requireString(obj: Record<string, unknown>, key: string, what: string): string {
  const value = obj[key];
  if (typeof value !== 'string') {
    throw new PayloadError(`${what}.${key} must be a string`);
  }
  return value;
}

export function parseProgress(data: unknown): Progress {
  const obj = asRecord(data, 'progress');
  rejectUnknownKeys(obj, PROGRESS_KEYS, 'progress');
  const voted = obj.voted;
  const total = obj.total;
  if (typeof voted !== 'number' || typeof total !== 'number') {
    throw new PayloadError('progress counters must be numbers');
  }
  return { voted, total };
}

export function parseNextResponse(data: unknown): NextResponse {
  const obj = asRecord(data, 'next response');
  if (obj.done === true) {
    rejectUnknownKeys(obj, DONE_KEYS, 'next response');
    return { done: true, progress: parseProgress(obj.progress) };
  }
  if (obj.done !== false) {
    throw new PayloadError('next response needs a boolean done flag');
  }
  rejectUnknownKeys(obj, ITEM_KEYS, 'next response');
  return {
    done: false,
    item_id: requireString(obj, 'item_id', 'item'),
    image: requireString(obj, 'image', 'item'),
    true_class: requireString(obj, 'true_class', 'item'),
    question: requireString(obj, 'question', 'item'),
    slot_a: requireString(obj, 'slot_a', 'item'),
    slot_b: requireString(obj, 'slot_b', 'item'),
    progress: parseProgress(obj.progress),
  };
}
