// Minimal scrolling strip chart for the cross-track stream (no deps).

export class StripChart {
  private values: number[] = [];

  constructor(
    private canvas: HTMLCanvasElement,
    private capacity = 600,
    private label = "cross-track [m]",
  ) {}

  push(v: number): void {
    this.values.push(v);
    if (this.values.length > this.capacity) this.values.shift();
    this.draw();
  }

  clear(): void {
    this.values = [];
    this.draw();
  }

  draw(): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    const { width: w, height: h } = this.canvas;
    ctx.clearRect(0, 0, w, h);
    ctx.fillStyle = "#161a1e";
    ctx.fillRect(0, 0, w, h);
    const vmax = Math.max(0.05, ...this.values);
    ctx.strokeStyle = "#2e3943";
    ctx.beginPath();
    for (const frac of [0.25, 0.5, 0.75]) {
      ctx.moveTo(0, h * frac);
      ctx.lineTo(w, h * frac);
    }
    ctx.stroke();
    ctx.strokeStyle = "#53b1fd";
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    this.values.forEach((v, i) => {
      const x = (i / Math.max(1, this.capacity - 1)) * w;
      const y = h - (v / vmax) * (h - 12) - 4;
      if (i === 0) ctx.moveTo(x, y);
      else ctx.lineTo(x, y);
    });
    ctx.stroke();
    ctx.fillStyle = "#9aa7b1";
    ctx.font = "10px sans-serif";
    ctx.fillText(`${this.label}  scale ${vmax.toFixed(2)}`, 6, 12);
  }
}
