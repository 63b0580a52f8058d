/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_accuracy: (a: number) => number;
export const demo_classMap: (a: number, b: number) => [number, number, number, number];
export const demo_classes: (a: number) => number;
export const demo_csmAt: (a: number, b: number, c: number) => [number, number, number, number];
export const demo_labels: (a: number) => [number, number];
export const demo_meanS1Map: (a: number, b: number) => [number, number, number, number];
export const demo_new: (a: number, b: bigint, c: number) => [number, number, number];
export const demo_points: (a: number) => [number, number];
export const demo_predict: (a: number, b: number, c: number) => [number, number, number];
export const demo_zetaHistogram: (a: number, b: number, c: number, d: number, e: number, f: number, g: bigint) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
