/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const plan_formula: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: bigint) => [number, number, number, number];
export const random_maze: (a: number, b: bigint, c: number) => [number, number, number, number];
export const score_branches: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const task_instance: (a: number, b: number, c: number, d: bigint) => [number, number, number, number];
export const __externref_table_alloc: () => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
