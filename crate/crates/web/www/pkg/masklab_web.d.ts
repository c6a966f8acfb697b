/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    action(): number;
    /**
     * Insertion then deletion curve of the last saliency map for the
     * expert's action over the top `fraction` of pixels:
     * `[n, ins..., del..., auc_ins, auc_del]`.
     */
    curves(fraction: number): Float64Array;
    /**
     * Draws a fresh state and clears the current saliency map.
     */
    generate(seed: bigint): void;
    height(): number;
    /**
     * A 32x32 world with `beacons` beacons per state, showing state `seed`.
     */
    constructor(beacons: number, seed: bigint);
    /**
     * Row-major intensities of the current state.
     */
    pixels(): Float32Array;
    /**
     * Expert action probabilities; index 0 is idle.
     */
    probs(): Float32Array;
    /**
     * Saliency for `action` by `method` (`ground_truth`, `rise`, `blur`,
     * `occlusion` or `normalized_delta`), normalized to `[0,1]`.
     */
    saliency(method: string, action: number): Float32Array;
    width(): number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_action: (a: number) => number;
    readonly demo_curves: (a: number, b: number) => [number, number, number, number];
    readonly demo_generate: (a: number, b: bigint) => [number, number];
    readonly demo_height: (a: number) => number;
    readonly demo_new: (a: number, b: bigint) => [number, number, number];
    readonly demo_pixels: (a: number) => [number, number];
    readonly demo_probs: (a: number) => [number, number, number, number];
    readonly demo_saliency: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly demo_width: (a: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
