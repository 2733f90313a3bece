import { describe, expect, it } from "vitest";

import { decodeRle, foregroundCount } from "../src/rle.js";

describe("decodeRle", () => {
    it("decodes an empty mask", () => {
        const m = decodeRle("RLE v1: 5 4;");
        expect(m.width).toBe(5);
        expect(m.height).toBe(4);
        expect(foregroundCount(m)).toBe(0);
    });

    it("decodes runs row-major", () => {
        const m = decodeRle("RLE v1: 3 2; 0 2 5 1");
        expect(Array.from(m.data)).toEqual([1, 1, 0, 0, 0, 1]);
    });

    it("handles a full mask", () => {
        const m = decodeRle("RLE v1: 4 4; 0 16");
        expect(foregroundCount(m)).toBe(16);
    });

    for (const bad of [
        "nope",
        "RLE v1: 3 2",
        "RLE v1: 0 2; 0 1",
        "RLE v1: 3 2; 0",
        "RLE v1: 3 2; 0 9",
        "RLE v1: 3 2; 2 2 1 1",
        "RLE v1: 3 2; x y",
    ]) {
        it(`rejects malformed input ${JSON.stringify(bad)}`, () => {
            expect(() => decodeRle(bad)).toThrow();
        });
    }
});
