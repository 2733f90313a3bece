/** Annotator view-state machine, kept free of DOM so it is testable.
 *
 * Invariants: the overlay always corresponds to the last server-acknowledged
 * version, and at most one mutating request is in flight, with a one-slot
 * queue behind it. Server failures leave the overlay untouched and remove
 * the optimistic marker.
 */

import { ApiClient, ApiError, MaskVersion, Polarity } from "./api.js";
import { DecodedMask, decodeRle } from "./rle.js";
import { Point, ViewTransform } from "./transform.js";

export interface Marker {
    x: number;
    y: number;
    polarity: Polarity;
}

type Mutation = () => Promise<void>;

export class AnnotatorState {
    readonly transform = new ViewTransform();
    toolMode: Polarity = "positive";

    sessionId: string | null = null;
    version = -1;
    imageWidth = 0;
    imageHeight = 0;
    overlay: DecodedMask | null = null;
    markers: Marker[] = [];
    busy = false;

    /** Re-render hook. */
    onChange: () => void = () => {};
    /** Non-fatal notices (out-of-bounds click, queue full). */
    onHint: (message: string) => void = () => {};
    /** Request failures (banner). */
    onError: (message: string) => void = () => {};

    private queued: Mutation | null = null;

    constructor(private readonly api: ApiClient) {}

    get hasSession(): boolean {
        return this.sessionId !== null;
    }

    get canUndo(): boolean {
        return this.hasSession && this.version > 0 && !this.busy;
    }

    get queueFull(): boolean {
        return this.queued !== null;
    }

    async openImage(image: Blob): Promise<void> {
        const created = await this.api.createSession(image);
        this.acceptVersion(created);
        this.markers = [];
        this.onChange();
    }

    /** Map a canvas point through zoom/pan and submit the click. */
    placeClickAtScreen(p: Point): void {
        if (!this.hasSession) {
            return;
        }
        const pixel = this.transform.screenToPixel(p, this.imageWidth, this.imageHeight);
        if (pixel === null) {
            this.onHint("click is outside the image");
            return;
        }
        const polarity = this.toolMode;
        this.submit(() => this.clickMutation(pixel.x, pixel.y, polarity));
    }

    requestUndo(): void {
        if (!this.hasSession || this.version === 0) {
            return;
        }
        this.submit(() => this.undoMutation());
    }

    async exportMask(): Promise<ArrayBuffer> {
        if (this.sessionId === null) {
            throw new Error("no open session");
        }
        return this.api.exportMaskPng(this.sessionId);
    }

    /** Resolves once no mutation is running or queued. */
    async settle(): Promise<void> {
        while (this.busy || this.queued !== null) {
            await new Promise((resolve) => setTimeout(resolve, 0));
        }
    }

    private acceptVersion(v: MaskVersion): void {
        this.sessionId = v.session_id;
        this.version = v.version;
        this.imageWidth = v.width;
        this.imageHeight = v.height;
        this.overlay = decodeRle(v.mask_rle);
    }

    private submit(op: Mutation): void {
        if (this.busy) {
            if (this.queued !== null) {
                this.onHint("an action is already queued; ignored");
                return;
            }
            this.queued = op;
            return;
        }
        void this.run(op);
    }

    private async run(op: Mutation): Promise<void> {
        this.busy = true;
        this.onChange();
        try {
            await op();
        } finally {
            this.busy = false;
            this.onChange();
            const next = this.queued;
            this.queued = null;
            if (next !== null) {
                void this.run(next);
            }
        }
    }

    private async clickMutation(x: number, y: number, polarity: Polarity): Promise<void> {
        const marker: Marker = { x, y, polarity };
        this.markers.push(marker);
        this.onChange();
        try {
            const v = await this.api.addClick(this.sessionId as string, x, y, polarity);
            this.acceptVersion(v);
        } catch (err) {
            this.markers = this.markers.filter((m) => m !== marker);
            this.reportFailure("click rejected", err);
        }
    }

    private async undoMutation(): Promise<void> {
        try {
            const v = await this.api.undo(this.sessionId as string);
            this.acceptVersion(v);
            this.markers.pop();
        } catch (err) {
            this.reportFailure("undo failed", err);
        }
    }

    private reportFailure(prefix: string, err: unknown): void {
        const detail = err instanceof ApiError
            ? `${err.code}: ${err.message}`
            : String(err);
        this.onError(`${prefix} (${detail})`);
    }
}
