import type { ConversationItem, Phase, SessionInfo } from "./types";

/**
 * Session state machine: TEACHING -> TRANSCRIBING -> DONE with no way back.
 * Transcription cannot start until every teaching item has been viewed, and
 * an item only advances once the server acknowledged its answer.
 */
export class SessionFlow {
  private phase_: Phase = "TEACHING";
  private teachingCursor = 0;
  private viewed: Set<number> = new Set();
  private itemCursor = 0;
  private submitted: Set<number> = new Set();
  readonly items: ConversationItem[];

  constructor(readonly session: SessionInfo) {
    this.items = session.conversations.flatMap((c) => c.items);
    if (this.items.length === 0) {
      throw new Error("session has no transcription items");
    }
  }

  get phase(): Phase {
    return this.phase_;
  }

  get teachingIndex(): number {
    return this.teachingCursor;
  }

  get teachingComplete(): boolean {
    return this.viewed.size >= this.session.teaching.length;
  }

  markTeachingViewed(index: number): void {
    if (this.phase_ !== "TEACHING") {
      throw new Error(`cannot teach in phase ${this.phase_}`);
    }
    if (index !== this.teachingCursor) {
      throw new Error(`teaching items must be viewed in order (at ${this.teachingCursor})`);
    }
    this.viewed.add(index);
    if (this.teachingCursor < this.session.teaching.length - 1) {
      this.teachingCursor += 1;
    }
  }

  startTranscription(): void {
    if (this.phase_ !== "TEACHING") {
      throw new Error(`cannot start transcription from ${this.phase_}`);
    }
    if (!this.teachingComplete) {
      throw new Error("teaching phase not finished");
    }
    this.phase_ = "TRANSCRIBING";
  }

  get currentItem(): ConversationItem {
    if (this.phase_ !== "TRANSCRIBING") {
      throw new Error(`no current item in phase ${this.phase_}`);
    }
    return this.items[this.itemCursor];
  }

  /** Conversation number and position of the current item, for display. */
  get progress(): { conversation: number; within: number; item: number; total: number } {
    let seen = 0;
    for (const conv of this.session.conversations) {
      if (this.itemCursor < seen + conv.items.length) {
        return {
          conversation: conv.conversation,
          within: this.itemCursor - seen,
          item: this.itemCursor,
          total: this.items.length,
        };
      }
      seen += conv.items.length;
    }
    throw new Error("cursor out of range");
  }

  markSubmitted(item: number): void {
    if (this.phase_ !== "TRANSCRIBING") {
      throw new Error(`cannot submit in phase ${this.phase_}`);
    }
    if (item !== this.currentItem.item) {
      throw new Error(`answer for ${item} but current item is ${this.currentItem.item}`);
    }
    if (this.submitted.has(item)) {
      throw new Error(`item ${item} already submitted`);
    }
    this.submitted.add(item);
    if (this.submitted.size >= this.items.length) {
      this.phase_ = "DONE";
    } else {
      this.itemCursor += 1;
    }
  }
}
