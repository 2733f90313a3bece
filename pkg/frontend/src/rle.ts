/** Decoder for the service's textual mask form:
 *  "RLE v1: <width> <height>; <start> <length> ..." over the row-major grid.
 */

export interface DecodedMask {
    width: number;
    height: number;
    /** Row-major, 1 = foreground. */
    data: Uint8Array;
}

export function decodeRle(text: string): DecodedMask {
    const prefix = "RLE v1:";
    if (!text.startsWith(prefix)) {
        throw new Error(`not an RLE v1 mask: ${text.slice(0, 24)}`);
    }
    const sep = text.indexOf(";");
    if (sep < 0) {
        throw new Error("RLE v1 mask is missing the ';' separator");
    }
    const dims = text.slice(prefix.length, sep).trim().split(/\s+/).map(Number);
    if (dims.length !== 2 || dims.some((d) => !Number.isInteger(d) || d < 1)) {
        throw new Error(`bad RLE dimensions: ${text.slice(prefix.length, sep)}`);
    }
    const [width, height] = dims;
    const data = new Uint8Array(width * height);
    const runPart = text.slice(sep + 1).trim();
    if (runPart.length === 0) {
        return { width, height, data };
    }
    const tokens = runPart.split(/\s+/).map(Number);
    if (tokens.length % 2 !== 0 || tokens.some((t) => !Number.isInteger(t) || t < 0)) {
        throw new Error("RLE runs must be (start, length) integer pairs");
    }
    let prevEnd = 0;
    for (let i = 0; i < tokens.length; i += 2) {
        const start = tokens[i];
        const length = tokens[i + 1];
        if (length < 1 || start < prevEnd || start + length > data.length) {
            throw new Error(`invalid RLE run (${start}, ${length})`);
        }
        data.fill(1, start, start + length);
        prevEnd = start + length;
    }
    return { width, height, data };
}

export function foregroundCount(mask: DecodedMask): number {
    let n = 0;
    for (let i = 0; i < mask.data.length; i++) {
        n += mask.data[i];
    }
    return n;
}
