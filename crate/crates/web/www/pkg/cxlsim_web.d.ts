/* tslint:disable */
/* eslint-disable */

/**
 * Interactive first-fit allocator over one device's HDM window.
 */
export class HdmDemo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Returns the block offset.
     */
    alloc(pid: number, kb: number): number;
    free(pid: number, offset: number): void;
    layout(): string;
    constructor(hdm_mb: number);
}

/**
 * Dependent-load latency vs working-set size, one point per power of four
 * from 16 KiB up to `max_mb` MiB.
 */
export function latency_curve(preset: string, max_mb: number, samples: number): string;

export function presets(): string;

/**
 * Peak bandwidth for each read fraction from 0.5 to 1.0.
 */
export function rdwr_curve(preset: string, requests: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_hdmdemo_free: (a: number, b: number) => void;
    readonly hdmdemo_alloc: (a: number, b: number, c: number) => [number, number, number];
    readonly hdmdemo_free: (a: number, b: number, c: number) => [number, number];
    readonly hdmdemo_layout: (a: number) => [number, number];
    readonly hdmdemo_new: (a: number) => number;
    readonly latency_curve: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly presets: () => [number, number];
    readonly rdwr_curve: (a: number, b: number, c: number) => [number, number, number, number];
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
