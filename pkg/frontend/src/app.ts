/**
 * Single-view rating flow: one item at a time, two anonymous answers,
 * auto-advance after each acknowledged vote.
 *
 * The client holds no progress of its own. Every render is driven by what
 * the service says comes next, so a page reload lands on exactly the item
 * the rater had not voted on yet.
 */

import { ApiError, StudyApi } from './api';
import { Choice, SessionItem } from './types';

type Phase = 'loading' | 'item' | 'done' | 'error';

interface ViewState {
  phase: Phase;
  item: SessionItem | null; // set exactly when phase === 'item'
  voted: number;
  total: number;
  pending: boolean; // a vote is in flight; no second request may start
  errorDetail: string;
}

function describeError(error: unknown): string {
  if (error instanceof ApiError) {
    return `${error.code}: ${error.message}`;
  }
  return String(error);
}

export class RatingApp {
  private state: ViewState = {
    phase: 'loading',
    item: null,
    voted: 0,
    total: 0,
    pending: false,
    errorDetail: '',
  };
  private retryAction: () => void = () => void this.loadNext();
  private keyHandler = (event: KeyboardEvent) => this.onKey(event);

  constructor(
    private root: HTMLElement,
    private api: StudyApi,
    private sessionId: string,
  ) {}

  start(): void {
    document.addEventListener('keydown', this.keyHandler);
    void this.loadNext();
  }

  stop(): void {
    document.removeEventListener('keydown', this.keyHandler);
  }

  private setState(patch: Partial<ViewState>): void {
    this.state = { ...this.state, ...patch };
    this.render();
  }

  async loadNext(): Promise<void> {
    this.retryAction = () => void this.loadNext();
    this.setState({ phase: 'loading', item: null, pending: false });
    try {
      const next = await this.api.nextItem(this.sessionId);
      if (next.done) {
        this.setState({ phase: 'done', item: null, voted: next.progress.voted, total: next.progress.total });
      } else {
        const { done, ...item } = next;
        this.setState({ phase: 'item', item, voted: item.progress.voted, total: item.progress.total });
      }
    } catch (error) {
      this.setState({ phase: 'error', item: null, pending: false, errorDetail: describeError(error) });
    }
  }

  /** Entry point for both buttons and arrow keys, so a keystroke and a
   * click are the same request by construction. */
  submit(choice: Choice): void {
    if (this.state.phase !== 'item' || this.state.pending || this.state.item === null) {
      return;
    }
    void this.postVote(this.state.item.item_id, choice);
  }

  private async postVote(itemId: string, choice: Choice): Promise<void> {
    if (this.state.pending) {
      return;
    }
    this.retryAction = () => void this.postVote(itemId, choice);
    this.setState({ pending: true });
    try {
      await this.api.submitVote(this.sessionId, itemId, choice);
    } catch (error) {
      if (error instanceof ApiError && error.code === 'AlreadyVoted') {
        // another client on this session got here first; whatever the
        // service now says is next is the real state
        void this.loadNext();
        return;
      }
      // not acknowledged, so nothing was persisted; retrying re-sends the
      // same vote, which the service accepts idempotently if the ack was
      // the only thing lost
      this.setState({ phase: 'error', item: null, pending: false, errorDetail: describeError(error) });
      return;
    }
    void this.loadNext();
  }

  private onKey(event: KeyboardEvent): void {
    if (event.target instanceof HTMLInputElement || event.target instanceof HTMLTextAreaElement) {
      return;
    }
    if (event.key === 'ArrowLeft') {
      event.preventDefault();
      this.submit('A');
    } else if (event.key === 'ArrowRight') {
      event.preventDefault();
      this.submit('B');
    }
  }

  private render(): void {
    const { phase, item, voted, total, pending, errorDetail } = this.state;

    if (phase === 'loading') {
      this.root.innerHTML = '<p class="status">Loading...</p>';
      return;
    }

    if (phase === 'error') {
      this.root.innerHTML = `
        <section class="error" id="error">
          <p>Something went wrong talking with the study service.</p>
          <p class="detail" id="error-detail"></p>
          <button id="retry" type="button">Retry</button>
        </section>
      `;
      this.setText('error-detail', errorDetail);
      const retry = this.root.querySelector('#retry') as HTMLButtonElement;
      retry.disabled = pending;
      retry.addEventListener('click', () => this.retryAction());
      return;
    }

    if (phase === 'done') {
      this.root.innerHTML = `
        <div class="study">
          <header class="study-header"><span id="progress"></span></header>
          <section class="done" id="done">
            <h2>All items rated</h2>
            <p>Every preference was recorded. You can close this page.</p>
            <a id="tally-link">View the tally</a>
          </section>
        </div>
      `;
      this.setText('progress', `${voted} / ${total}`);
      const link = this.root.querySelector('#tally-link') as HTMLAnchorElement;
      link.href = `/tally?sessions=${encodeURIComponent(this.sessionId)}`;
      return;
    }

    if (item === null) {
      return;
    }
    this.root.innerHTML = `
      <div class="study">
        <header class="study-header"><span id="progress"></span></header>
        <figure class="context">
          <img id="item-image" alt="image under review" />
          <figcaption>True class: <span id="true-class"></span></figcaption>
        </figure>
        <p class="question" id="question"></p>
        <div class="answers">
          <section class="answer">
            <h2>Answer A</h2>
            <p class="answer-text" id="slot-a"></p>
            <button id="vote-a" type="button">Prefer A (left arrow)</button>
          </section>
          <section class="answer">
            <h2>Answer B</h2>
            <p class="answer-text" id="slot-b"></p>
            <button id="vote-b" type="button">Prefer B (right arrow)</button>
          </section>
        </div>
      </div>
    `;
    this.setText('progress', `${voted} / ${total}`);
    this.setText('true-class', item.true_class);
    this.setText('question', item.question);
    this.setText('slot-a', item.slot_a);
    this.setText('slot-b', item.slot_b);
    const image = this.root.querySelector('#item-image') as HTMLImageElement;
    if (item.image) {
      image.src = '/images/' + encodeURI(item.image);
    } else {
      (this.root.querySelector('.context') as HTMLElement).hidden = true;
    }
    for (const [id, choice] of [
      ['vote-a', 'A'],
      ['vote-b', 'B'],
    ] as const) {
      const button = this.root.querySelector(`#${id}`) as HTMLButtonElement;
      button.disabled = pending;
      button.addEventListener('click', () => this.submit(choice));
    }
  }

  private setText(id: string, value: string): void {
    // answers and questions are arbitrary model output; they only ever
    // enter the page as text nodes
    const node = this.root.querySelector(`#${id}`);
    if (node) {
      node.textContent = value;
    }
  }
}
