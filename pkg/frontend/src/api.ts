/** Typed client for the annotation service HTTP API. */

export type Polarity = "positive" | "negative";

export interface MaskVersion {
    session_id: string;
    version: number;
    width: number;
    height: number;
    mask_rle: string;
}

export interface ClickInfo {
    x: number;
    y: number;
    polarity: Polarity;
    round: number;
}

export interface SessionInfo {
    session_id: string;
    version: number;
    width: number;
    height: number;
    mode: string;
    encoding: string;
    predictor: string;
    clicks: ClickInfo[];
    created: string;
    updated: string;
}

export class ApiError extends Error {
    constructor(
        public readonly status: number,
        public readonly code: string,
        message: string,
    ) {
        super(message);
        this.name = "ApiError";
    }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
    constructor(
        private readonly baseUrl: string = "",
        private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
    ) {}

    private async decode<T>(resp: Response): Promise<T> {
        if (!resp.ok) {
            let code = `http_${resp.status}`;
            let message = resp.statusText;
            try {
                const body = (await resp.json()) as { code?: string; message?: string };
                code = body.code ?? code;
                message = body.message ?? message;
            } catch {
                // non-JSON error body; keep the status text
            }
            throw new ApiError(resp.status, code, message);
        }
        return (await resp.json()) as T;
    }

    async createSession(image: Blob, mode: "scratch" | "refine" = "scratch",
                        initialMask?: Blob): Promise<MaskVersion> {
        const form = new FormData();
        form.append("image", image, "image.png");
        form.append("mode", mode);
        if (initialMask !== undefined) {
            form.append("initial_mask", initialMask, "initial.png");
        }
        const resp = await this.fetchFn(`${this.baseUrl}/sessions`, {
            method: "POST",
            body: form,
        });
        return this.decode<MaskVersion>(resp);
    }

    async addClick(sessionId: string, x: number, y: number,
                   polarity: Polarity): Promise<MaskVersion> {
        const resp = await this.fetchFn(`${this.baseUrl}/sessions/${sessionId}/clicks`, {
            method: "POST",
            headers: { "content-type": "application/json" },
            body: JSON.stringify({ x, y, polarity }),
        });
        return this.decode<MaskVersion>(resp);
    }

    async undo(sessionId: string): Promise<MaskVersion> {
        const resp = await this.fetchFn(`${this.baseUrl}/sessions/${sessionId}/undo`, {
            method: "POST",
        });
        return this.decode<MaskVersion>(resp);
    }

    async getState(sessionId: string): Promise<SessionInfo> {
        const resp = await this.fetchFn(`${this.baseUrl}/sessions/${sessionId}`);
        return this.decode<SessionInfo>(resp);
    }

    async exportMaskPng(sessionId: string): Promise<ArrayBuffer> {
        const resp = await this.fetchFn(`${this.baseUrl}/sessions/${sessionId}/mask.png`);
        if (!resp.ok) {
            throw new ApiError(resp.status, `http_${resp.status}`, "mask export failed");
        }
        return resp.arrayBuffer();
    }

    async deleteSession(sessionId: string): Promise<void> {
        const resp = await this.fetchFn(`${this.baseUrl}/sessions/${sessionId}`, {
            method: "DELETE",
        });
        if (!resp.ok && resp.status !== 404) {
            throw new ApiError(resp.status, `http_${resp.status}`, "delete failed");
        }
    }
}
