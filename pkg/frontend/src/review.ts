// Pseudo-label review: each decision is exactly one API call, and the
// queue advances locally so the next sample is ready immediately.

import type { ApiBox, QueueItem, ReviewResponse } from "./types";
import type { ApiClient } from "./api";

export class ReviewQueue {
  private index = 0;

  constructor(
    private readonly client: ApiClient,
    private readonly items: QueueItem[],
  ) {}

  get current(): QueueItem | null {
    return this.items[this.index] ?? null;
  }

  get remaining(): number {
    return Math.max(this.items.length - this.index, 0);
  }

  private async decide(
    action: "approve" | "reject" | "edit",
    boxes?: ApiBox[],
  ): Promise<ReviewResponse> {
    const item = this.current;
    if (item === null) throw new Error("review queue is empty");
    const response = await this.client.review(item.sample_id, action, boxes);
    this.index += 1;
    return response;
  }

  approve(): Promise<ReviewResponse> {
    return this.decide("approve");
  }

  reject(): Promise<ReviewResponse> {
    return this.decide("reject");
  }

  edit(boxes: ApiBox[]): Promise<ReviewResponse> {
    return this.decide("edit", boxes);
  }
}
