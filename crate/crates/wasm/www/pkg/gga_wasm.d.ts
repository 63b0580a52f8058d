/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    accuracy(): number;
    /**
     * Predicted class on the same grid as `meanS1Map`.
     */
    classMap(res: number): Float64Array;
    classes(): number;
    /**
     * Row-major matrix ordered by descending probability, followed by the
     * class id of each row.
     */
    csmAt(x: number, y: number): Float64Array;
    labels(): Uint32Array;
    /**
     * Mean of S1 on a `res`×`res` grid over the unit square, rows from
     * y = 0 upwards; NaN where the matrix is degenerate.
     */
    meanS1Map(res: number): Float64Array;
    /**
     * Samples 80 points per class and trains a two-layer MLP.
     */
    constructor(classes: number, seed: bigint, epochs: number);
    /**
     * Training points as interleaved `x, y` pairs.
     */
    points(): Float64Array;
    predict(x: number, y: number): number;
    /**
     * Histogram of ζ over [-1, 1] for Gaussian noise of scale `sigma`
     * around a point; the last entry counts undefined draws.
     */
    zetaHistogram(x: number, y: number, sigma: number, injections: number, bins: number, seed: bigint): Float64Array;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_accuracy: (a: number) => number;
    readonly demo_classMap: (a: number, b: number) => [number, number, number, number];
    readonly demo_classes: (a: number) => number;
    readonly demo_csmAt: (a: number, b: number, c: number) => [number, number, number, number];
    readonly demo_labels: (a: number) => [number, number];
    readonly demo_meanS1Map: (a: number, b: number) => [number, number, number, number];
    readonly demo_new: (a: number, b: bigint, c: number) => [number, number, number];
    readonly demo_points: (a: number) => [number, number];
    readonly demo_predict: (a: number, b: number, c: number) => [number, number, number];
    readonly demo_zetaHistogram: (a: number, b: number, c: number, d: number, e: number, f: number, g: bigint) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
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
