import { describe, expect, it } from "vitest";

import { ViewTransform } from "../src/transform.js";

describe("ViewTransform", () => {
    it("round-trips screen -> image -> screen within 0.5 px at all zooms", () => {
        for (const zoom of [0.5, 1, 2, 4]) {
            const t = new ViewTransform();
            t.zoom = zoom;
            t.panX = -37.25;
            t.panY = 118.5;
            for (let i = 0; i < 200; i++) {
                const p = { x: (i * 13.37) % 900 - 100, y: (i * 7.91) % 700 - 50 };
                const back = t.imageToScreen(t.screenToImage(p));
                expect(Math.abs(back.x - p.x)).toBeLessThanOrEqual(0.5);
                expect(Math.abs(back.y - p.y)).toBeLessThanOrEqual(0.5);
            }
        }
    });

    it("maps screen clicks at 2x zoom to halved image coordinates", () => {
        const t = new ViewTransform();
        t.zoom = 2;
        const img = t.screenToImage({ x: 40, y: 10 });
        expect(img).toEqual({ x: 20, y: 5 });
    });

    it("screenToPixel floors and bounds-checks", () => {
        const t = new ViewTransform();
        t.zoom = 2;
        expect(t.screenToPixel({ x: 9, y: 9 }, 20, 16)).toEqual({ x: 4, y: 4 });
        expect(t.screenToPixel({ x: -1, y: 5 }, 20, 16)).toBeNull();
        expect(t.screenToPixel({ x: 40, y: 32 }, 20, 16)).toBeNull();
    });

    it("zoomAt keeps the pivot fixed", () => {
        const t = new ViewTransform();
        t.panX = 12;
        t.panY = -4;
        const pivot = { x: 55, y: 77 };
        const before = t.screenToImage(pivot);
        t.zoomAt(2.0, pivot);
        const after = t.screenToImage(pivot);
        expect(Math.abs(after.x - before.x)).toBeLessThan(1e-9);
        expect(Math.abs(after.y - before.y)).toBeLessThan(1e-9);
        expect(t.zoom).toBe(2);
    });

    it("clamps zoom to the configured range", () => {
        const t = new ViewTransform();
        t.zoomAt(1e-9, { x: 0, y: 0 });
        expect(t.zoom).toBeGreaterThan(0);
        t.zoomAt(1e9, { x: 0, y: 0 });
        expect(t.zoom).toBeLessThanOrEqual(32);
    });

    it("fitTo centers the image", () => {
        const t = new ViewTransform();
        t.fitTo(100, 50, 200, 200);
        expect(t.zoom).toBe(2);
        expect(t.panX).toBe(0);
        expect(t.panY).toBe(50);
    });
});
