import { z } from "zod";

export const AvPairSchema = z.object({
  aspect: z.string(),
  value: z.string(),
  mentions: z.number().int(),
});

export const ItemSchema = z.object({
  item_id: z.string(),
  title: z.string(),
  av_pairs: z.array(AvPairSchema),
});

export const QuestionSchema = z.object({
  aspect: z.string(),
  value: z.string(),
  text: z.string(),
});

export const SessionRoundSchema = z.object({
  session_id: z.string(),
  iteration: z.number().int().min(1),
  shown_item: ItemSchema,
  questions: z.array(QuestionSchema),
  personalization: z.boolean(),
  finished: z.boolean(),
});

export const SessionStateSchema = z.object({
  session_id: z.string(),
  user_id: z.string(),
  query: z.string(),
  iteration: z.number().int().min(0),
  shown_items: z.array(ItemSchema),
  pending_questions: z.array(QuestionSchema),
  feedback: z.object({
    positive: z.array(AvPairSchema),
    negative: z.array(AvPairSchema),
  }),
  personalization: z.boolean(),
  finished: z.boolean(),
});

export type AvPair = z.infer<typeof AvPairSchema>;
export type Item = z.infer<typeof ItemSchema>;
export type Question = z.infer<typeof QuestionSchema>;
export type SessionRound = z.infer<typeof SessionRoundSchema>;
export type SessionSnapshot = z.infer<typeof SessionStateSchema>;

export type AnswerChoice = "yes" | "no" | "skip";

export interface AnswerPayload {
  aspect: string;
  value: string;
  answer: AnswerChoice;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

async function parse<T>(response: Response, schema: z.ZodType<T>): Promise<T> {
  if (!response.ok) {
    let detail = response.statusText;
    try {
      const body = await response.json();
      if (body && typeof body.detail === "string") detail = body.detail;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(response.status, detail);
  }
  return schema.parse(await response.json());
}

export class SessionApi {
  constructor(
    private baseUrl: string = "",
    private fetchFn: typeof fetch = fetch,
  ) {}

  startSession(userId: string, query: string): Promise<SessionRound> {
    return this.fetchFn(`${this.baseUrl}/sessions`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ user_id: userId, query }),
    }).then((r) => parse(r, SessionRoundSchema));
  }

  postAnswers(sessionId: string, answers: AnswerPayload[]): Promise<SessionRound> {
    return this.fetchFn(`${this.baseUrl}/sessions/${sessionId}/answers`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ answers }),
    }).then((r) => parse(r, SessionRoundSchema));
  }

  getSession(sessionId: string): Promise<SessionSnapshot> {
    return this.fetchFn(`${this.baseUrl}/sessions/${sessionId}`).then((r) =>
      parse(r, SessionStateSchema),
    );
  }

  getItem(itemId: string): Promise<Item> {
    return this.fetchFn(`${this.baseUrl}/items/${itemId}`).then((r) =>
      parse(r, ItemSchema),
    );
  }
}
