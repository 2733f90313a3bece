/** DOM wiring: canvas rendering, toolbar, and input handling. */

import { ApiClient } from "./api.js";
import { renderOverlayRgba } from "./overlay.js";
import { AnnotatorState } from "./state.js";

const MAX_UPLOAD_BYTES = 32 * 1024 * 1024;

function byId<T extends HTMLElement>(id: string): T {
    const el = document.getElementById(id);
    if (el === null) {
        throw new Error(`missing element #${id}`);
    }
    return el as T;
}

function download(name: string, bytes: ArrayBuffer): void {
    const url = URL.createObjectURL(new Blob([bytes], { type: "image/png" }));
    const a = document.createElement("a");
    a.href = url;
    a.download = name;
    a.click();
    URL.revokeObjectURL(url);
}

class AnnotatorApp {
    private readonly state = new AnnotatorState(new ApiClient(""));
    private readonly canvas = byId<HTMLCanvasElement>("canvas");
    private readonly ctx = this.canvas.getContext("2d") as CanvasRenderingContext2D;
    private readonly banner = byId<HTMLDivElement>("banner");
    private readonly versionLabel = byId<HTMLSpanElement>("version");
    private readonly undoButton = byId<HTMLButtonElement>("undo");
    private readonly exportButton = byId<HTMLButtonElement>("export");
    private image: ImageBitmap | null = null;
    private overlayCanvas: HTMLCanvasElement | null = null;
    private panning = false;
    private last = { x: 0, y: 0 };

    constructor() {
        this.state.onChange = () => this.render();
        this.state.onHint = (m) => this.flash(m, false);
        this.state.onError = (m) => this.flash(m, true);
        this.wire();
        this.render();
    }

    private wire(): void {
        byId<HTMLInputElement>("file").addEventListener("change", (ev) => {
            const input = ev.target as HTMLInputElement;
            const file = input.files?.[0];
            if (file) {
                void this.open(file);
            }
            input.value = "";
        });
        for (const mode of ["positive", "negative"] as const) {
            byId<HTMLInputElement>(`tool-${mode}`).addEventListener("change", () => {
                this.state.toolMode = mode;
            });
        }
        this.undoButton.addEventListener("click", () => this.state.requestUndo());
        this.exportButton.addEventListener("click", () => {
            void this.state
                .exportMask()
                .then((bytes) => download("mask.png", bytes))
                .catch((err) => this.flash(String(err), true));
        });

        this.canvas.addEventListener("mousedown", (ev) => {
            if (ev.button === 1 || ev.shiftKey) {
                this.panning = true;
                this.last = { x: ev.offsetX, y: ev.offsetY };
                ev.preventDefault();
            }
        });
        window.addEventListener("mouseup", () => {
            this.panning = false;
        });
        this.canvas.addEventListener("mousemove", (ev) => {
            if (this.panning) {
                this.state.transform.panBy(ev.offsetX - this.last.x, ev.offsetY - this.last.y);
                this.last = { x: ev.offsetX, y: ev.offsetY };
                this.render();
            }
        });
        this.canvas.addEventListener("click", (ev) => {
            if (!ev.shiftKey) {
                this.state.placeClickAtScreen({ x: ev.offsetX, y: ev.offsetY });
            }
        });
        this.canvas.addEventListener("wheel", (ev) => {
            ev.preventDefault();
            const factor = ev.deltaY < 0 ? 1.25 : 0.8;
            this.state.transform.zoomAt(factor, { x: ev.offsetX, y: ev.offsetY });
            this.render();
        }, { passive: false });
    }

    private async open(file: File): Promise<void> {
        if (file.size > MAX_UPLOAD_BYTES) {
            this.flash(`file is ${(file.size / 1e6).toFixed(1)} MB; limit is 32 MB`, true);
            return;
        }
        try {
            this.image = await createImageBitmap(file);
            await this.state.openImage(file);
            this.state.transform.fitTo(
                this.state.imageWidth, this.state.imageHeight,
                this.canvas.width, this.canvas.height,
            );
            this.flash(`session ${this.state.sessionId ?? ""} opened`, false);
            this.render();
        } catch (err) {
            this.flash(`could not open image: ${String(err)}`, true);
        }
    }

    private flash(message: string, isError: boolean): void {
        this.banner.textContent = message;
        this.banner.className = isError ? "banner error" : "banner";
        if (message) {
            setTimeout(() => {
                if (this.banner.textContent === message) {
                    this.banner.textContent = "";
                }
            }, 4000);
        }
    }

    private refreshOverlay(): void {
        const overlay = this.state.overlay;
        if (overlay === null) {
            this.overlayCanvas = null;
            return;
        }
        const off = document.createElement("canvas");
        off.width = overlay.width;
        off.height = overlay.height;
        const ictx = off.getContext("2d") as CanvasRenderingContext2D;
        ictx.putImageData(
            new ImageData(renderOverlayRgba(overlay), overlay.width, overlay.height), 0, 0,
        );
        this.overlayCanvas = off;
    }

    private render(): void {
        this.versionLabel.textContent = this.state.hasSession
            ? `v${this.state.version}${this.state.busy ? " …" : ""}`
            : "no session";
        this.undoButton.disabled = !this.state.canUndo;
        this.exportButton.disabled = !this.state.hasSession;

        this.ctx.fillStyle = "#202228";
        this.ctx.fillRect(0, 0, this.canvas.width, this.canvas.height);
        if (this.image === null) {
            return;
        }
        const t = this.state.transform;
        this.ctx.imageSmoothingEnabled = t.zoom < 1;
        this.ctx.setTransform(t.zoom, 0, 0, t.zoom, t.panX, t.panY);
        this.ctx.drawImage(this.image, 0, 0);
        this.refreshOverlay();
        if (this.overlayCanvas !== null) {
            this.ctx.drawImage(this.overlayCanvas, 0, 0);
        }
        this.ctx.setTransform(1, 0, 0, 1, 0, 0);
        for (const marker of this.state.markers) {
            const p = t.imageToScreen({ x: marker.x + 0.5, y: marker.y + 0.5 });
            this.ctx.beginPath();
            this.ctx.arc(p.x, p.y, 5, 0, 2 * Math.PI);
            this.ctx.fillStyle = marker.polarity === "positive" ? "#27c93f" : "#e5484d";
            this.ctx.fill();
            this.ctx.strokeStyle = "#ffffff";
            this.ctx.stroke();
        }
    }
}

window.addEventListener("DOMContentLoaded", () => {
    new AnnotatorApp();
});
