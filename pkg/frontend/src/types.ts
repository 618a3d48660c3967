export interface TeachingItem {
  index: number;
  clip: string;
  message: string;
}

/** Transcription items carry only an opaque clip id, never the answer. */
export interface ConversationItem {
  item: number;
  clip: string;
}

export interface ConversationInfo {
  conversation: number;
  items: ConversationItem[];
}

export interface SessionInfo {
  session_id: string;
  viewpoint: string;
  fps: number;
  teaching: TeachingItem[];
  conversations: ConversationInfo[];
}

export interface AnswerDraft {
  message: string | null;
  confidence: number;
}

export interface SubmitAck {
  ok: boolean;
  answered: number;
}

export interface MessageStats {
  accuracy: number | null;
  confidence: number | null;
  shown_to: number;
}

export interface StudyReport {
  participants: number;
  per_message: Record<string, MessageStats>;
  overall: { accuracy: number; confidence: number };
}

export type Phase = "TEACHING" | "TRANSCRIBING" | "DONE";
