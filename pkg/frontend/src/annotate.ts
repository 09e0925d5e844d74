// Annotation session state: which queue item is on screen, the boxes
// drawn so far, and the submit flow. Keyboard-first: number keys pick
// the class, n/p moves through the batch, u undoes the last box.

import type { ApiBox, QueueItem } from "./types";
import type { Rect } from "./coords";
import { canvasToImage, clampToImage, isDegenerate } from "./coords";
import { ApiClient, putLabelsWithRetry } from "./api";

export interface DrawnBox {
  rect: Rect; // image coordinates
  className: string;
}

export interface SubmitHooks {
  /** Called before submitting an empty set; return false to cancel. */
  confirmEmpty: () => Promise<boolean> | boolean;
  /** Called on a revision conflict; return true to retry on the fresh copy. */
  confirmConflict: () => Promise<boolean> | boolean;
}

export class AnnotationSession {
  private index = 0;
  private drawn = new Map<string, DrawnBox[]>();
  private revisions = new Map<string, number>();
  activeClass: string;

  constructor(
    private readonly client: ApiClient,
    private readonly items: QueueItem[],
    readonly classNames: string[],
    private readonly annotator = "annotation-ui",
  ) {
    if (classNames.length === 0) throw new Error("need at least one class");
    this.activeClass = classNames[0];
    for (const item of items) this.revisions.set(item.sample_id, item.revision);
  }

  get current(): QueueItem | null {
    return this.items[this.index] ?? null;
  }

  get position(): { index: number; total: number } {
    return { index: this.index, total: this.items.length };
  }

  next(): void {
    if (this.index < this.items.length - 1) this.index += 1;
  }

  previous(): void {
    if (this.index > 0) this.index -= 1;
  }

  /** Map a number hotkey (1-9) to a class selection. */
  pressClassKey(key: string): boolean {
    const slot = Number.parseInt(key, 10) - 1;
    if (Number.isNaN(slot) || slot < 0 || slot >= this.classNames.length) {
      return false;
    }
    this.activeClass = this.classNames[slot];
    return true;
  }

  boxesFor(sampleId: string): DrawnBox[] {
    return this.drawn.get(sampleId) ?? [];
  }

  /** Add a canvas-space rectangle drawn at the given zoom to the current item. */
  addCanvasRect(canvasRect: Rect, scale: number): DrawnBox | null {
    const item = this.current;
    if (item === null) return null;
    const rect = clampToImage(
      canvasToImage(canvasRect, scale),
      item.width,
      item.height,
    );
    if (isDegenerate(rect)) return null;
    const box: DrawnBox = { rect, className: this.activeClass };
    const list = this.boxesFor(item.sample_id).concat(box);
    this.drawn.set(item.sample_id, list);
    return box;
  }

  undo(): void {
    const item = this.current;
    if (item === null) return;
    const list = this.boxesFor(item.sample_id);
    if (list.length > 0) this.drawn.set(item.sample_id, list.slice(0, -1));
  }

  /** Submit the current item's boxes; resolves to the new revision or null if cancelled. */
  async submit(hooks: SubmitHooks): Promise<number | null> {
    const item = this.current;
    if (item === null) return null;
    const boxes = this.boxesFor(item.sample_id).map(toApiBox);
    if (boxes.length === 0 && !(await hooks.confirmEmpty())) return null;
    const response = await putLabelsWithRetry(
      this.client,
      item.sample_id,
      this.revisions.get(item.sample_id) ?? 0,
      boxes,
      this.annotator,
      hooks.confirmConflict,
    );
    if (response === null) return null;
    this.revisions.set(item.sample_id, response.revision);
    return response.revision;
  }
}

export function toApiBox(box: DrawnBox): ApiBox {
  return {
    class: box.className,
    bbox: [box.rect.x0, box.rect.y0, box.rect.x1, box.rect.y1],
    confidence: 1.0,
    source: "human",
  };
}
