/** Mask overlay rasterization: translucent fill plus a solid boundary
 * outline, produced as raw RGBA so it can be tested without a canvas.
 */

import { DecodedMask } from "./rle.js";

export const FILL_RGBA: [number, number, number, number] = [64, 160, 255, 128];
export const EDGE_RGBA: [number, number, number, number] = [16, 80, 200, 255];

/** Foreground pixel with a background 4-neighbor (frame counts as background). */
function isEdge(mask: DecodedMask, x: number, y: number): boolean {
    const { width, height, data } = mask;
    const idx = y * width + x;
    if (data[idx] === 0) {
        return false;
    }
    return (
        x === 0 || data[idx - 1] === 0 ||
        x === width - 1 || data[idx + 1] === 0 ||
        y === 0 || data[idx - width] === 0 ||
        y === height - 1 || data[idx + width] === 0
    );
}

/** RGBA buffer (width*height*4) for compositing over the image. */
export function renderOverlayRgba(mask: DecodedMask): Uint8ClampedArray<ArrayBuffer> {
    const { width, height, data } = mask;
    const out = new Uint8ClampedArray(width * height * 4);
    for (let y = 0; y < height; y++) {
        for (let x = 0; x < width; x++) {
            const idx = y * width + x;
            if (data[idx] === 0) {
                continue;
            }
            const color = isEdge(mask, x, y) ? EDGE_RGBA : FILL_RGBA;
            out.set(color, idx * 4);
        }
    }
    return out;
}
