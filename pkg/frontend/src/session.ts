/**
 * Editor session state: source/reference images, the painted mask, guidance
 * settings, and the submission history used for side-by-side comparison.
 *
 * One request is in flight at a time; a submit while busy is rejected with an
 * explicit error (the UI disables the button), never silently dropped.
 */

import { ApiClient, ApiError, EditResponse } from "./api.js";
import { MaskState } from "./mask.js";

export interface LoadedImage {
  base64: string; // PNG payload without the data-URL prefix
  width: number;
  height: number;
}

export interface HistoryEntry {
  id: number;
  scale: number;
  steps: number;
  seed: number;
  resultBase64: string;
  timingMs: number;
  modelId: string;
}

export class BusyError extends Error {
  constructor() {
    super("an edit request is already in flight");
  }
}

export class EditorSession {
  source: LoadedImage | null = null;
  reference: LoadedImage | null = null;
  mask: MaskState | null = null;
  scale = 5;
  steps = 50;
  seed = 0;
  busy = false;
  lastError: string | null = null;
  history: HistoryEntry[] = [];
  selection: number[] = []; // history entry ids picked for comparison
  private nextId = 1;

  setSource(image: LoadedImage): void {
    this.source = image;
    // The mask canvas always matches the source dimensions.
    this.mask = new MaskState(image.width, image.height);
    this.selection = [];
  }

  setReference(image: LoadedImage): void {
    this.reference = image;
  }

  canSubmit(): boolean {
    return !this.busy && this.source !== null && this.reference !== null && this.mask !== null;
  }

  /**
   * Send the current state as an edit request and append the result to the
   * history. Throws BusyError while a request is in flight.
   */
  async submit(client: ApiClient, encodeMask: (mask: MaskState) => string): Promise<HistoryEntry> {
    if (this.busy) {
      throw new BusyError();
    }
    if (!this.source || !this.reference || !this.mask) {
      throw new Error("source, reference, and mask must be set before submitting");
    }
    this.busy = true;
    this.lastError = null;
    const request = {
      source: this.source.base64,
      mask: encodeMask(this.mask),
      reference: this.reference.base64,
      scale: this.scale,
      steps: this.steps,
      seed: this.seed,
    };
    try {
      const response: EditResponse = await client.postEdit(request);
      const entry: HistoryEntry = {
        id: this.nextId++,
        scale: this.scale,
        steps: this.steps,
        seed: this.seed,
        resultBase64: response.result,
        timingMs: response.timing_ms,
        modelId: response.model_id,
      };
      this.history.push(entry);
      return entry;
    } catch (err) {
      this.lastError = err instanceof ApiError
        ? `${err.message}${err.field ? ` (${err.field})` : ""}`
        : String(err);
      throw err;
    } finally {
      this.busy = false;
    }
  }

  toggleSelect(id: number): void {
    if (this.selection.includes(id)) {
      this.selection = this.selection.filter((s) => s !== id);
      return;
    }
    this.selection = [...this.selection, id].slice(-2); // keep the last two picks
  }

  /** The two selected entries for the side-by-side view, or null. */
  compareSelection(): [HistoryEntry, HistoryEntry] | null {
    if (this.selection.length !== 2) {
      return null;
    }
    const byId = new Map(this.history.map((e) => [e.id, e]));
    const a = byId.get(this.selection[0]);
    const b = byId.get(this.selection[1]);
    return a && b ? [a, b] : null;
  }

  entryLabel(entry: HistoryEntry): string {
    return `scale ${entry.scale} · ${entry.steps} steps · seed ${entry.seed}`;
  }
}
