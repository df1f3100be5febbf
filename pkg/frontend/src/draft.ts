/** Annotation draft state with localStorage persistence.
 *
 * A draft survives page reloads until the server acks the submission; every
 * field is either playback-derived (moment) or user-entered (score, text,
 * fine-tune offset) — the UI never invents values.
 */

export interface UiAnnotationDraft {
  vid: string;
  moment: number | null; // playback time captured when Record was pressed
  score: number | null; // slider value in [0, 1]
  explanation: string;
  fineTuneOffset: number; // seconds, from the frame-step buttons
}

export function emptyDraft(vid: string): UiAnnotationDraft {
  return { vid, moment: null, score: null, explanation: "", fineTuneOffset: 0 };
}

export function canSubmit(draft: UiAnnotationDraft): boolean {
  return (
    draft.moment !== null &&
    draft.score !== null &&
    draft.explanation.trim().length > 0
  );
}

/** Final annotated moment: capture plus fine-tune. Fine-tuning cannot push a
 * valid capture outside the clip, but an out-of-range capture is passed
 * through untouched — the server rejects it and the UI shows the error
 * rather than fabricating a moment the user never pointed at. */
export function effectiveMoment(draft: UiAnnotationDraft, duration: number): number {
  const moment = draft.moment ?? 0;
  const raw = moment + draft.fineTuneOffset;
  if (moment < 0 || moment > duration) {
    return raw;
  }
  return Math.min(Math.max(raw, 0), duration);
}

export class DraftStore {
  constructor(
    private readonly storage: Storage,
    private readonly annotatorId: string,
  ) {}

  private key(vid: string): string {
    return `xnec-draft/${this.annotatorId}/${vid}`;
  }

  load(vid: string): UiAnnotationDraft {
    const raw = this.storage.getItem(this.key(vid));
    if (!raw) {
      return emptyDraft(vid);
    }
    try {
      const parsed = JSON.parse(raw) as UiAnnotationDraft;
      return { ...emptyDraft(vid), ...parsed, vid };
    } catch {
      return emptyDraft(vid);
    }
  }

  save(draft: UiAnnotationDraft): void {
    this.storage.setItem(this.key(draft.vid), JSON.stringify(draft));
  }

  clear(vid: string): void {
    this.storage.removeItem(this.key(vid));
  }
}
