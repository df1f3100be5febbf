/** Typed client for the annotation service HTTP+JSON API. */

export interface NextClip {
  done: boolean;
  vid?: string;
  duration?: number;
  video_url?: string;
  progress: number;
  total: number;
}

export interface AnnotationPayload {
  vid: string;
  annotator_id: string;
  moment: number;
  score: number;
  explanation: string;
}

export type SubmitResult =
  | { ok: true }
  | { ok: false; kind: "field"; field: string; message: string }
  | { ok: false; kind: "conflict"; message: string }
  | { ok: false; kind: "network"; message: string };

type FetchLike = typeof fetch;

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (...args) => fetch(...args),
  ) {}

  url(path: string): string {
    return this.baseUrl.replace(/\/$/, "") + path;
  }

  async nextClip(annotatorId: string): Promise<NextClip> {
    const res = await this.fetchFn(this.url(`/session/${annotatorId}/next`));
    if (!res.ok) {
      throw new Error(`next clip failed: ${res.status}`);
    }
    return (await res.json()) as NextClip;
  }

  /** POST a fresh annotation, or PUT to replace one (fine-tune semantics). */
  async submit(payload: AnnotationPayload, replace = false): Promise<SubmitResult> {
    const target = replace
      ? this.url(`/annotations/${payload.vid}/${payload.annotator_id}`)
      : this.url("/annotations");
    let res: Response;
    try {
      res = await this.fetchFn(target, {
        method: replace ? "PUT" : "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(payload),
      });
    } catch (err) {
      return { ok: false, kind: "network", message: String(err) };
    }
    if (res.ok) {
      return { ok: true };
    }
    let detail: unknown = null;
    try {
      detail = ((await res.json()) as { detail?: unknown }).detail;
    } catch {
      // non-JSON error body; fall through to the generic branches
    }
    if (detail && typeof detail === "object" && "field" in detail) {
      const d = detail as { field: string; message: string };
      return { ok: false, kind: "field", field: d.field, message: d.message };
    }
    if (res.status === 409) {
      return { ok: false, kind: "conflict", message: String(detail ?? "conflict") };
    }
    return { ok: false, kind: "network", message: `status ${res.status}` };
  }
}
