/* tslint:disable */
/* eslint-disable */

/**
 * Plans `formula` from the map's start cell with the reference trajectory
 * planner and simulates the closed loop under `dynamics` (`di` or `uni`).
 */
export function plan_formula(map_json: string, formula: string, dynamics: string, selector: string, seed: bigint): string;

/**
 * Random maze with `regions` labelled cells.
 */
export function random_maze(size: number, seed: bigint, regions: number): string;

/**
 * DNF branches of `formula` with their heuristic scores on `map`.
 * Parse errors come back in the `error` field rather than as exceptions.
 */
export function score_branches(map_json: string, formula: string): string;

/**
 * Benchmark instance for `template` (`reach`, `until`, `disjunctive`, ...).
 */
export function task_instance(size: number, template: string, seed: bigint): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly plan_formula: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: bigint) => [number, number, number, number];
    readonly random_maze: (a: number, b: bigint, c: number) => [number, number, number, number];
    readonly score_branches: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly task_instance: (a: number, b: number, c: number, d: bigint) => [number, number, number, number];
    readonly __externref_table_alloc: () => number;
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
