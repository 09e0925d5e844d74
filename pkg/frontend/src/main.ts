// DOM bootstrap: wires the canvas, keyboard, and status panel to the
// session logic. Everything testable lives in the imported modules.

import { ApiClient } from "./api";
import { AnnotationSession } from "./annotate";
import { ReviewQueue } from "./review";
import { StatusPoller, describePools } from "./status";
import { beginDrag, updateDrag, dragRect, imageToCanvas, type Drag } from "./coords";
import type { QueueItem, RunStatus } from "./types";

const ZOOM_LEVELS = [0.5, 0.75, 1.0, 1.5, 2.0];

interface Elements {
  canvas: HTMLCanvasElement;
  statusLine: HTMLElement;
  positionLine: HTMLElement;
  classLine: HTMLElement;
}

function requireElement<T extends Element>(selector: string): T {
  const el = document.querySelector<T>(selector);
  if (el === null) throw new Error(`missing element ${selector}`);
  return el;
}

class App {
  private readonly client = new ApiClient();
  private session: AnnotationSession | null = null;
  private review: ReviewQueue | null = null;
  private drag: Drag | null = null;
  private zoomIndex = 2;
  private image: HTMLImageElement | null = null;
  private classNames: string[] = [];

  constructor(private readonly el: Elements) {}

  private get zoom(): number {
    return ZOOM_LEVELS[this.zoomIndex];
  }

  async start(): Promise<void> {
    const poller = new StatusPoller(this.client);
    poller.subscribe((status: RunStatus) => {
      this.el.statusLine.textContent = describePools(status);
    });
    poller.start();

    const queue = await this.client.getQueue("key_annotation");
    this.classNames = collectClasses(queue);
    this.session = new AnnotationSession(this.client, queue, this.classNames);
    const reviewItems = await this.client
      .getQueue("pseudo_review")
      .catch(() => [] as QueueItem[]);
    this.review = new ReviewQueue(this.client, reviewItems);
    void this.review;

    this.bindCanvas();
    this.bindKeyboard();
    await this.showCurrent();
  }

  private bindCanvas(): void {
    const canvas = this.el.canvas;
    canvas.addEventListener("pointerdown", (ev) => {
      this.drag = beginDrag(ev.offsetX, ev.offsetY);
    });
    canvas.addEventListener("pointermove", (ev) => {
      if (this.drag === null) return;
      this.drag = updateDrag(this.drag, ev.offsetX, ev.offsetY);
      this.redraw();
    });
    canvas.addEventListener("pointerup", (ev) => {
      if (this.drag === null || this.session === null) return;
      this.drag = updateDrag(this.drag, ev.offsetX, ev.offsetY);
      this.session.addCanvasRect(dragRect(this.drag), this.zoom);
      this.drag = null;
      this.redraw();
    });
  }

  private bindKeyboard(): void {
    document.addEventListener("keydown", (ev) => {
      const session = this.session;
      if (session === null) return;
      if (session.pressClassKey(ev.key)) {
        this.el.classLine.textContent = `class: ${session.activeClass}`;
        return;
      }
      switch (ev.key) {
        case "n":
          session.next();
          void this.showCurrent();
          break;
        case "p":
          session.previous();
          void this.showCurrent();
          break;
        case "u":
          session.undo();
          this.redraw();
          break;
        case "Enter":
          void session
            .submit({
              confirmEmpty: () => window.confirm("Submit with no boxes?"),
              confirmConflict: () =>
                window.confirm("Newer labels exist on the server. Overwrite?"),
            })
            .then((revision) => {
              if (revision !== null) {
                session.next();
                void this.showCurrent();
              }
            });
          break;
        case "+":
          this.zoomIndex = Math.min(this.zoomIndex + 1, ZOOM_LEVELS.length - 1);
          void this.showCurrent();
          break;
        case "-":
          this.zoomIndex = Math.max(this.zoomIndex - 1, 0);
          void this.showCurrent();
          break;
      }
    });
  }

  private async showCurrent(): Promise<void> {
    const session = this.session;
    const item = session?.current ?? null;
    if (session === null || item === null) {
      this.el.positionLine.textContent = "queue empty";
      return;
    }
    const { index, total } = session.position;
    this.el.positionLine.textContent = `${index + 1} / ${total}  ${item.sample_id}`;
    this.el.classLine.textContent = `class: ${session.activeClass}`;
    this.image = await loadImage(this.client.imageUrl(item.sample_id));
    this.el.canvas.width = Math.round(item.width * this.zoom);
    this.el.canvas.height = Math.round(item.height * this.zoom);
    this.redraw();
  }

  private redraw(): void {
    const session = this.session;
    const item = session?.current ?? null;
    const ctx = this.el.canvas.getContext("2d");
    if (session === null || item === null || ctx === null) return;
    ctx.clearRect(0, 0, this.el.canvas.width, this.el.canvas.height);
    if (this.image !== null) {
      ctx.drawImage(this.image, 0, 0, this.el.canvas.width, this.el.canvas.height);
    }
    ctx.strokeStyle = "#00d000";
    ctx.lineWidth = 2;
    for (const box of session.boxesFor(item.sample_id)) {
      const r = imageToCanvas(box.rect, this.zoom);
      ctx.strokeRect(r.x0, r.y0, r.x1 - r.x0, r.y1 - r.y0);
      ctx.fillStyle = "#00d000";
      ctx.fillText(box.className, r.x0 + 2, r.y0 + 12);
    }
    if (this.drag !== null) {
      const r = dragRect(this.drag);
      ctx.strokeStyle = "#d0a000";
      ctx.strokeRect(r.x0, r.y0, r.x1 - r.x0, r.y1 - r.y0);
    }
  }
}

function collectClasses(queue: QueueItem[]): string[] {
  const names = new Set<string>();
  for (const item of queue) for (const box of item.boxes) names.add(box.class);
  if (names.size === 0) {
    // Fresh runs have no boxes yet; fall back to a generic palette.
    return ["object"];
  }
  return [...names].sort();
}

function loadImage(url: string): Promise<HTMLImageElement> {
  return new Promise((resolve, reject) => {
    const img = new Image();
    img.onload = () => resolve(img);
    img.onerror = () => reject(new Error(`failed to load ${url}`));
    img.src = url;
  });
}

export function mount(): void {
  const app = new App({
    canvas: requireElement<HTMLCanvasElement>("#annotation-canvas"),
    statusLine: requireElement<HTMLElement>("#status-line"),
    positionLine: requireElement<HTMLElement>("#position-line"),
    classLine: requireElement<HTMLElement>("#class-line"),
  });
  void app.start();
}

if (typeof document !== "undefined" && document.readyState !== "loading") {
  mount();
} else if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", mount);
}
