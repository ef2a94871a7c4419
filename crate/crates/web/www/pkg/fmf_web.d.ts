/* tslint:disable */
/* eslint-disable */

/**
 * A two-atom Gaussian-process dataset with its exact transport field.
 */
export class TwoAtomDemo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Both atoms, concatenated.
     */
    atoms(): Float64Array;
    /**
     * `[one-step, euler, reference]` flattened.
     */
    compare(seed: number, steps: number): Float64Array;
    /**
     * `[exact flow, averaged conditional flow, mismatch]` flattened; the
     * mismatch is the final element.
     */
    mismatch(seed: number, t: number, r: number): Float64Array;
    constructor(n: number, data_seed: number);
    noise(seed: number): Float64Array;
    points(): Float64Array;
}

export function sample_noise(kind: string, param: number, n: number, count: number, seed: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_twoatomdemo_free: (a: number, b: number) => void;
    readonly sample_noise: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly twoatomdemo_atoms: (a: number) => [number, number];
    readonly twoatomdemo_compare: (a: number, b: number, c: number) => [number, number, number, number];
    readonly twoatomdemo_mismatch: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly twoatomdemo_new: (a: number, b: number) => [number, number, number];
    readonly twoatomdemo_noise: (a: number, b: number) => [number, number];
    readonly twoatomdemo_points: (a: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
