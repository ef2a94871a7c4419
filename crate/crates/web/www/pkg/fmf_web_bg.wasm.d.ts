/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_twoatomdemo_free: (a: number, b: number) => void;
export const sample_noise: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const twoatomdemo_atoms: (a: number) => [number, number];
export const twoatomdemo_compare: (a: number, b: number, c: number) => [number, number, number, number];
export const twoatomdemo_mismatch: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const twoatomdemo_new: (a: number, b: number) => [number, number, number];
export const twoatomdemo_noise: (a: number, b: number) => [number, number];
export const twoatomdemo_points: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
