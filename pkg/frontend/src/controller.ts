import { StudyApi } from "./api";
import { SessionFlow } from "./flow";
import type { SessionInfo, StudyReport } from "./types";

/** Hook for whatever is displaying the clips (DOM image, or nothing in tests). */
export interface MediaView {
  show(clipUrl: string, label: string | null): void;
}

const NULL_VIEW: MediaView = { show: () => undefined };

/**
 * Drives one participant session against the study service. The browser app
 * and the headless end-to-end script share this logic, so the flow the tests
 * exercise is the flow the UI runs.
 */
export class SessionController {
  flow!: SessionFlow;
  private view: MediaView;

  constructor(private api: StudyApi, view?: MediaView) {
    this.view = view ?? NULL_VIEW;
  }

  get session(): SessionInfo {
    return this.flow.session;
  }

  async start(seed?: number): Promise<void> {
    const session = await this.api.createSession(seed);
    this.flow = new SessionFlow(session);
    this.showTeaching();
  }

  private showTeaching(): void {
    const item = this.flow.session.teaching[this.flow.teachingIndex];
    this.view.show(this.api.clipUrl(item.clip, this.session.session_id), item.message);
  }

  private showCurrentItem(): void {
    const item = this.flow.currentItem;
    this.view.show(this.api.clipUrl(item.clip, this.session.session_id), null);
  }

  /** Confirm the current teaching item as viewed; advances or unlocks transcription. */
  async completeTeachingItem(): Promise<void> {
    const index = this.flow.teachingIndex;
    await this.api.markTeachingViewed(this.session.session_id, index);
    this.flow.markTeachingViewed(index);
    if (this.flow.teachingComplete) {
      this.flow.startTranscription();
      this.showCurrentItem();
    } else {
      this.showTeaching();
    }
  }

  /** Submit the answer for the current item; advances only on server ack. */
  async submitAnswer(message: string, confidence: number): Promise<void> {
    const item = this.flow.currentItem.item;
    await this.api.submitTranscription(this.session.session_id, item, message, confidence);
    this.flow.markSubmitted(item);
    if (this.flow.phase === "TRANSCRIBING") {
      this.showCurrentItem();
    }
  }

  report(): Promise<StudyReport> {
    return this.api.report();
  }
}
