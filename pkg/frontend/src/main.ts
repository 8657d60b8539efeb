/**
 * Entry point: resume the session named in the URL, or offer to start one.
 */

import { StudyApi, createApi } from './api';
import { RatingApp } from './app';

export function boot(root: HTMLElement, api: StudyApi, win: Window): RatingApp | null {
  const params = new URLSearchParams(win.location.search);
  const sessionId = params.get('session');
  if (sessionId) {
    return startRating(root, api, sessionId);
  }
  renderEntry(root, api, win);
  return null;
}

function startRating(root: HTMLElement, api: StudyApi, sessionId: string): RatingApp {
  const app = new RatingApp(root, api, sessionId);
  app.start();
  return app;
}

function enterSession(root: HTMLElement, api: StudyApi, win: Window, sessionId: string): void {
  // the id lives in the URL and nowhere else; progress is server-side, so
  // a reload of this URL resumes mid-study
  const url = new URL(win.location.href);
  url.searchParams.set('session', sessionId);
  win.history.replaceState(null, '', url.toString());
  startRating(root, api, sessionId);
}

function renderEntry(root: HTMLElement, api: StudyApi, win: Window): void {
  root.innerHTML = `
    <div class="entry">
      <h1>Answer preference study</h1>
      <p>
        Each screen shows an image, its true class, a question, and two
        answers. Pick the answer you prefer; the arrow keys work too.
      </p>
      <button id="start" type="button">Start a new session</button>
      <form id="resume-form">
        <label for="resume-id">or resume one: </label>
        <input id="resume-id" name="session" placeholder="session id" />
        <button type="submit">Resume</button>
      </form>
      <p class="detail" id="entry-error"></p>
    </div>
  `;
  const start = root.querySelector('#start') as HTMLButtonElement;
  start.addEventListener('click', async () => {
    start.disabled = true;
    try {
      const created = await api.createSession();
      enterSession(root, api, win, created.sessionId);
    } catch (error) {
      start.disabled = false;
      const note = root.querySelector('#entry-error');
      if (note) {
        note.textContent = String(error);
      }
    }
  });
  const form = root.querySelector('#resume-form') as HTMLFormElement;
  form.addEventListener('submit', (event) => {
    event.preventDefault();
    const input = root.querySelector('#resume-id') as HTMLInputElement;
    const sessionId = input.value.trim();
    if (sessionId) {
      enterSession(root, api, win, sessionId);
    }
  });
}

const appRoot = document.getElementById('app');
if (appRoot) {
  boot(appRoot, createApi(), window);
}
