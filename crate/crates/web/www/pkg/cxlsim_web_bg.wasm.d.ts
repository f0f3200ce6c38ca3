/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_hdmdemo_free: (a: number, b: number) => void;
export const hdmdemo_alloc: (a: number, b: number, c: number) => [number, number, number];
export const hdmdemo_free: (a: number, b: number, c: number) => [number, number];
export const hdmdemo_layout: (a: number) => [number, number];
export const hdmdemo_new: (a: number) => number;
export const latency_curve: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const presets: () => [number, number];
export const rdwr_curve: (a: number, b: number, c: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
