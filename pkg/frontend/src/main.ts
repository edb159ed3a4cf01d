/** DOM wiring for the editor: canvases, brush, controls, history, compare. */

import { ApiClient, ApiError } from "./api.js";
import { MaskState } from "./mask.js";
import { EditorSession } from "./session.js";

const MASK_OVERLAY_COLOR = "rgba(255, 64, 64, 0.45)";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function stripDataUrl(dataUrl: string): string {
  return dataUrl.substring(dataUrl.indexOf(",") + 1);
}

/** Render a mask buffer to a PNG base64 payload via an offscreen canvas. */
function encodeMaskPng(mask: MaskState): string {
  const canvas = document.createElement("canvas");
  canvas.width = mask.width;
  canvas.height = mask.height;
  const ctx = canvas.getContext("2d")!;
  ctx.putImageData(new ImageData(mask.toImageDataBytes(), mask.width, mask.height), 0, 0);
  return stripDataUrl(canvas.toDataURL("image/png"));
}

async function fileToImage(file: File): Promise<{ base64: string; width: number; height: number }> {
  const bitmap = await createImageBitmap(file);
  const canvas = document.createElement("canvas");
  canvas.width = bitmap.width;
  canvas.height = bitmap.height;
  canvas.getContext("2d")!.drawImage(bitmap, 0, 0);
  return { base64: stripDataUrl(canvas.toDataURL("image/png")), width: bitmap.width, height: bitmap.height };
}

class EditorApp {
  private session = new EditorSession();
  private client = new ApiClient();
  private brushRadius = 4;
  private erasing = false;
  private painting = false;
  private lastPoint: { x: number; y: number } | null = null;
  private displayScale = 1;

  private sourceCanvas = el<HTMLCanvasElement>("source-canvas");
  private overlayCanvas = el<HTMLCanvasElement>("mask-overlay");
  private referenceImg = el<HTMLImageElement>("reference-preview");
  private resultImg = el<HTMLImageElement>("result-image");
  private historyStrip = el<HTMLDivElement>("history-strip");
  private compareView = el<HTMLDivElement>("compare-view");
  private errorBox = el<HTMLDivElement>("error-box");
  private submitButton = el<HTMLButtonElement>("submit-button");
  private statusLine = el<HTMLSpanElement>("status-line");

  async start(): Promise<void> {
    try {
      const config = await this.client.getConfig();
      const scaleInput = el<HTMLInputElement>("scale-input");
      scaleInput.value = String(config.default_scale);
      this.session.scale = config.default_scale;
      this.session.steps = config.default_steps;
      el<HTMLInputElement>("steps-input").value = String(config.default_steps);
      const health = await this.client.getHealth();
      this.statusLine.textContent = `model ${health.model ?? "?"} ready`;
    } catch (err) {
      this.statusLine.textContent = err instanceof ApiError && err.status === 503
        ? "model is loading, retry shortly"
        : `service unavailable: ${String(err)}`;
    }
    this.bindControls();
    this.render();
  }

  private bindControls(): void {
    el<HTMLInputElement>("source-file").addEventListener("change", async (ev) => {
      const file = (ev.target as HTMLInputElement).files?.[0];
      if (!file) return;
      const image = await fileToImage(file);
      this.session.setSource(image);
      this.drawSource(image.base64);
      this.render();
    });

    el<HTMLInputElement>("reference-file").addEventListener("change", async (ev) => {
      const file = (ev.target as HTMLInputElement).files?.[0];
      if (!file) return;
      const image = await fileToImage(file);
      this.session.setReference(image);
      this.referenceImg.src = `data:image/png;base64,${image.base64}`;
      this.render();
    });

    const scaleInput = el<HTMLInputElement>("scale-input");
    scaleInput.addEventListener("input", () => {
      this.session.scale = Number(scaleInput.value);
      el<HTMLSpanElement>("scale-value").textContent = scaleInput.value;
    });
    el<HTMLInputElement>("steps-input").addEventListener("change", (ev) => {
      this.session.steps = Number((ev.target as HTMLInputElement).value);
    });
    el<HTMLInputElement>("seed-input").addEventListener("change", (ev) => {
      this.session.seed = Number((ev.target as HTMLInputElement).value);
    });
    el<HTMLInputElement>("brush-size").addEventListener("input", (ev) => {
      this.brushRadius = Number((ev.target as HTMLInputElement).value);
    });
    el<HTMLInputElement>("eraser-toggle").addEventListener("change", (ev) => {
      this.erasing = (ev.target as HTMLInputElement).checked;
    });
    el<HTMLButtonElement>("clear-mask").addEventListener("click", () => {
      this.session.mask?.clear();
      this.drawOverlay();
    });

    this.overlayCanvas.addEventListener("pointerdown", (ev) => this.onPointer(ev, true));
    this.overlayCanvas.addEventListener("pointermove", (ev) => this.onPointer(ev, false));
    const stop = () => {
      this.painting = false;
      this.lastPoint = null;
    };
    this.overlayCanvas.addEventListener("pointerup", stop);
    this.overlayCanvas.addEventListener("pointerleave", stop);

    this.submitButton.addEventListener("click", () => void this.submit());
  }

  private onPointer(ev: PointerEvent, isDown: boolean): void {
    if (!this.session.mask) return;
    if (isDown) {
      this.painting = true;
      this.overlayCanvas.setPointerCapture(ev.pointerId);
    }
    if (!this.painting) return;
    const rect = this.overlayCanvas.getBoundingClientRect();
    const x = (ev.clientX - rect.left) / this.displayScale;
    const y = (ev.clientY - rect.top) / this.displayScale;
    if (this.lastPoint) {
      this.session.mask.paintStroke(this.lastPoint.x, this.lastPoint.y, x, y, this.brushRadius, this.erasing);
    } else {
      this.session.mask.paintCircle(x, y, this.brushRadius, this.erasing);
    }
    this.lastPoint = { x, y };
    this.drawOverlay();
  }

  private drawSource(base64: string): void {
    const img = new Image();
    img.onload = () => {
      const size = this.session.source!;
      this.displayScale = Math.max(1, Math.floor(320 / Math.max(size.width, size.height)));
      for (const canvas of [this.sourceCanvas, this.overlayCanvas]) {
        canvas.width = size.width;
        canvas.height = size.height;
        canvas.style.width = `${size.width * this.displayScale}px`;
        canvas.style.height = `${size.height * this.displayScale}px`;
      }
      this.sourceCanvas.getContext("2d")!.drawImage(img, 0, 0);
      this.drawOverlay();
    };
    img.src = `data:image/png;base64,${base64}`;
  }

  private drawOverlay(): void {
    const ctx = this.overlayCanvas.getContext("2d")!;
    ctx.clearRect(0, 0, this.overlayCanvas.width, this.overlayCanvas.height);
    const mask = this.session.mask;
    if (!mask) return;
    ctx.fillStyle = MASK_OVERLAY_COLOR;
    for (let y = 0; y < mask.height; y++) {
      for (let x = 0; x < mask.width; x++) {
        if (mask.get(x, y)) ctx.fillRect(x, y, 1, 1);
      }
    }
  }

  private async submit(): Promise<void> {
    if (!this.session.canSubmit()) return;
    this.render();
    try {
      const entry = await this.session.submit(this.client, encodeMaskPng);
      this.resultImg.src = `data:image/png;base64,${entry.resultBase64}`;
    } catch {
      // session.lastError already carries the message
    }
    this.render();
  }

  private render(): void {
    this.submitButton.disabled = !this.session.canSubmit();
    this.submitButton.textContent = this.session.busy ? "editing…" : "Run edit";
    this.errorBox.textContent = this.session.lastError ?? "";
    this.errorBox.style.display = this.session.lastError ? "block" : "none";
    this.renderHistory();
    this.renderCompare();
  }

  private renderHistory(): void {
    this.historyStrip.replaceChildren();
    for (const entry of [...this.session.history].reverse()) {
      const card = document.createElement("figure");
      card.className = "history-card" + (this.session.selection.includes(entry.id) ? " selected" : "");
      const img = document.createElement("img");
      img.src = `data:image/png;base64,${entry.resultBase64}`;
      img.alt = this.session.entryLabel(entry);
      const caption = document.createElement("figcaption");
      caption.textContent = this.session.entryLabel(entry);
      card.append(img, caption);
      card.addEventListener("click", () => {
        this.session.toggleSelect(entry.id);
        this.render();
      });
      this.historyStrip.append(card);
    }
  }

  private renderCompare(): void {
    this.compareView.replaceChildren();
    const pair = this.session.compareSelection();
    if (!pair) {
      this.compareView.textContent = "select two history entries to compare";
      return;
    }
    for (const entry of pair) {
      const pane = document.createElement("figure");
      pane.className = "compare-pane";
      const img = document.createElement("img");
      img.src = `data:image/png;base64,${entry.resultBase64}`;
      const caption = document.createElement("figcaption");
      caption.textContent = this.session.entryLabel(entry);
      pane.append(img, caption);
      this.compareView.append(pane);
    }
  }
}

window.addEventListener("DOMContentLoaded", () => {
  void new EditorApp().start();
});
