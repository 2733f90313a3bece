/** Zoom/pan mapping between canvas (screen) space and image pixel space. */

export interface Point {
    x: number;
    y: number;
}

export const MIN_ZOOM = 0.125;
export const MAX_ZOOM = 32;

/**
 * screen = image * zoom + pan. Image coordinates are continuous; pixel
 * indices come from flooring. The mapping is exact, so round trips are
 * well inside the half-pixel budget at any zoom.
 */
export class ViewTransform {
    zoom = 1;
    panX = 0;
    panY = 0;

    screenToImage(p: Point): Point {
        return { x: (p.x - this.panX) / this.zoom, y: (p.y - this.panY) / this.zoom };
    }

    imageToScreen(p: Point): Point {
        return { x: p.x * this.zoom + this.panX, y: p.y * this.zoom + this.panY };
    }

    /** Integer pixel under a screen point, or null when outside the image. */
    screenToPixel(p: Point, width: number, height: number): Point | null {
        const img = this.screenToImage(p);
        const x = Math.floor(img.x);
        const y = Math.floor(img.y);
        if (x < 0 || y < 0 || x >= width || y >= height) {
            return null;
        }
        return { x, y };
    }

    /** Multiply zoom by `factor`, keeping the given screen point fixed. */
    zoomAt(factor: number, pivot: Point): void {
        const next = Math.min(MAX_ZOOM, Math.max(MIN_ZOOM, this.zoom * factor));
        const applied = next / this.zoom;
        this.panX = pivot.x - (pivot.x - this.panX) * applied;
        this.panY = pivot.y - (pivot.y - this.panY) * applied;
        this.zoom = next;
    }

    panBy(dx: number, dy: number): void {
        this.panX += dx;
        this.panY += dy;
    }

    /** Reset so the whole image fits a viewport, centered. */
    fitTo(imageW: number, imageH: number, viewW: number, viewH: number): void {
        const scale = Math.min(viewW / imageW, viewH / imageH);
        this.zoom = Math.min(MAX_ZOOM, Math.max(MIN_ZOOM, scale));
        this.panX = (viewW - imageW * this.zoom) / 2;
        this.panY = (viewH - imageH * this.zoom) / 2;
    }
}
