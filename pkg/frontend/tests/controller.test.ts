import { describe, expect, it, vi } from "vitest";

import { StudyApi } from "../src/api";
import { SessionController } from "../src/controller";
import type { SessionInfo } from "../src/types";

function session(): SessionInfo {
  return {
    session_id: "s1",
    viewpoint: "YAW_90",
    fps: 4,
    teaching: [
      { index: 0, clip: "clip000", message: "NO" },
      { index: 1, clip: "clip001", message: "YES" },
    ],
    conversations: [
      { conversation: 0, items: [{ item: 0, clip: "clip010" }, { item: 1, clip: "clip011" }] },
    ],
  };
}

function apiWith(overrides: Partial<Record<string, unknown>> = {}): StudyApi {
  const stub = {
    createSession: vi.fn(async () => session()),
    markTeachingViewed: vi.fn(async () => ({ teaching_complete: false })),
    clipUrl: (clip: string, sid: string) => `/api/clip/${clip}?session=${sid}`,
    submitTranscription: vi.fn(async () => ({ ok: true, answered: 1 })),
    report: vi.fn(async () => ({ participants: 1, per_message: {}, overall: { accuracy: 1, confidence: 5 } })),
    ...overrides,
  };
  return stub as unknown as StudyApi;
}

describe("SessionController", () => {
  it("walks teaching into transcription and shows media per phase", async () => {
    const shown: Array<string | null> = [];
    const controller = new SessionController(apiWith(), {
      show: (_url, label) => shown.push(label),
    });
    await controller.start(5);
    expect(controller.flow.phase).toBe("TEACHING");
    expect(shown).toEqual(["NO"]);
    await controller.completeTeachingItem();
    await controller.completeTeachingItem();
    expect(controller.flow.phase).toBe("TRANSCRIBING");
    // transcription items must render without a label
    expect(shown).toEqual(["NO", "YES", null]);
  });

  it("does not advance when the server rejects an answer", async () => {
    const controller = new SessionController(apiWith({
      submitTranscription: vi.fn(async () => {
        throw new Error("DuplicateAnswer");
      }),
    }));
    await controller.start(5);
    await controller.completeTeachingItem();
    await controller.completeTeachingItem();
    const before = controller.flow.currentItem.item;
    await expect(controller.submitAnswer("NO", 5)).rejects.toThrow(/DuplicateAnswer/);
    expect(controller.flow.phase).toBe("TRANSCRIBING");
    expect(controller.flow.currentItem.item).toBe(before);
  });

  it("reaches DONE after the final acknowledged answer", async () => {
    const controller = new SessionController(apiWith());
    await controller.start(5);
    await controller.completeTeachingItem();
    await controller.completeTeachingItem();
    await controller.submitAnswer("NO", 3);
    await controller.submitAnswer("YES", 8);
    expect(controller.flow.phase).toBe("DONE");
  });
});
