/**
 * Binary mask buffer, kept separate from the canvas so the exported mask is
 * exactly the painted one: pixels are 0 or 1, rendered as 0/255 grayscale,
 * and the server's threshold-128 decode reproduces the buffer bit for bit.
 */
export class MaskState {
  readonly width: number;
  readonly height: number;
  private data: Uint8Array;

  constructor(width: number, height: number) {
    if (width < 1 || height < 1) {
      throw new Error(`invalid mask size ${width}x${height}`);
    }
    this.width = width;
    this.height = height;
    this.data = new Uint8Array(width * height);
  }

  clear(): void {
    this.data.fill(0);
  }

  get(x: number, y: number): number {
    return this.data[y * this.width + x];
  }

  set(x: number, y: number, value: number): void {
    this.data[y * this.width + x] = value ? 1 : 0;
  }

  /** Stamp a filled circle; erase=true clears instead of painting. */
  paintCircle(cx: number, cy: number, radius: number, erase = false): void {
    const value = erase ? 0 : 1;
    const r2 = radius * radius;
    const x0 = Math.max(0, Math.floor(cx - radius));
    const x1 = Math.min(this.width - 1, Math.ceil(cx + radius));
    const y0 = Math.max(0, Math.floor(cy - radius));
    const y1 = Math.min(this.height - 1, Math.ceil(cy + radius));
    for (let y = y0; y <= y1; y++) {
      for (let x = x0; x <= x1; x++) {
        const dx = x - cx;
        const dy = y - cy;
        if (dx * dx + dy * dy <= r2) {
          this.data[y * this.width + x] = value;
        }
      }
    }
  }

  /** Connect two pointer positions with circle stamps (brush stroke segment). */
  paintStroke(x0: number, y0: number, x1: number, y1: number, radius: number, erase = false): void {
    const dist = Math.hypot(x1 - x0, y1 - y0);
    const steps = Math.max(1, Math.ceil(dist));
    for (let i = 0; i <= steps; i++) {
      const t = i / steps;
      this.paintCircle(x0 + t * (x1 - x0), y0 + t * (y1 - y0), radius, erase);
    }
  }

  fillAll(): void {
    this.data.fill(1);
  }

  count(): number {
    let n = 0;
    for (const v of this.data) n += v;
    return n;
  }

  isEmpty(): boolean {
    return this.count() === 0;
  }

  equals(other: MaskState): boolean {
    if (other.width !== this.width || other.height !== this.height) return false;
    for (let i = 0; i < this.data.length; i++) {
      if (this.data[i] !== other.data[i]) return false;
    }
    return true;
  }

  copy(): MaskState {
    const out = new MaskState(this.width, this.height);
    out.data.set(this.data);
    return out;
  }

  /** RGBA bytes for ImageData: opaque white where masked, opaque black elsewhere. */
  toImageDataBytes(): Uint8ClampedArray<ArrayBuffer> {
    const out = new Uint8ClampedArray(new ArrayBuffer(this.width * this.height * 4));
    for (let i = 0; i < this.data.length; i++) {
      const v = this.data[i] ? 255 : 0;
      out[i * 4] = v;
      out[i * 4 + 1] = v;
      out[i * 4 + 2] = v;
      out[i * 4 + 3] = 255;
    }
    return out;
  }

  /** Inverse of toImageDataBytes under the server's threshold-128 convention. */
  static fromImageDataBytes(bytes: Uint8ClampedArray, width: number, height: number): MaskState {
    const mask = new MaskState(width, height);
    for (let i = 0; i < width * height; i++) {
      mask.data[i] = bytes[i * 4] >= 128 ? 1 : 0;
    }
    return mask;
  }
}
