/**
 * Image loading: PNG files and the raw planar float32 raster format used by
 * the pipeline (channel planes + JSON sidecar with width/height/channels).
 */

import { readFileSync, readdirSync, statSync, writeFileSync } from 'node:fs'
import { extname, join } from 'node:path'
import { PNG } from 'pngjs'
import type { Raster } from './grid.js'

export function loadPng(path: string): Raster {
  const png = PNG.sync.read(readFileSync(path))
  const data = new Float32Array(png.width * png.height * 3)
  for (let p = 0; p < png.width * png.height; p++) {
    data[3 * p] = png.data[4 * p] / 255
    data[3 * p + 1] = png.data[4 * p + 1] / 255
    data[3 * p + 2] = png.data[4 * p + 2] / 255
  }
  return { width: png.width, height: png.height, channels: 3, data }
}

export function savePng(raster: Raster, path: string): void {
  const png = new PNG({ width: raster.width, height: raster.height })
  for (let p = 0; p < raster.width * raster.height; p++) {
    for (let k = 0; k < 3; k++) {
      const ch = raster.channels === 1 ? 0 : k
      const v = raster.data[p * raster.channels + ch]
      png.data[4 * p + k] = Math.max(0, Math.min(255, Math.round(v * 255)))
    }
    png.data[4 * p + 3] = 255
  }
  writeFileSync(path, PNG.sync.write(png))
}

interface RawSidecar {
  width: number
  height: number
  channels: number
}

export function loadRawRaster(path: string): Raster {
  const meta = JSON.parse(readFileSync(path + '.json', 'utf-8')) as RawSidecar
  const blob = readFileSync(path)
  const expected = 4 * meta.width * meta.height * meta.channels
  if (blob.length !== expected) {
    throw new Error(`raw raster ${path} is ${blob.length} bytes, expected ${expected}`)
  }
  // planar channel-major planes -> interleaved HWC
  const planes = new Float32Array(meta.width * meta.height * meta.channels)
  for (let i = 0; i < planes.length; i++) planes[i] = blob.readFloatLE(4 * i)
  const data = new Float32Array(planes.length)
  const hw = meta.width * meta.height
  for (let k = 0; k < meta.channels; k++) {
    for (let p = 0; p < hw; p++) data[p * meta.channels + k] = planes[k * hw + p]
  }
  return { width: meta.width, height: meta.height, channels: meta.channels, data }
}

export function loadImage(path: string): Raster {
  const ext = extname(path).toLowerCase()
  if (ext === '.png') return loadPng(path)
  if (ext === '.f32' || ext === '.raw') return loadRawRaster(path)
  throw new Error(`unsupported image format: ${path}`)
}

const IMAGE_EXTS = new Set(['.png', '.f32', '.raw'])

/** Sorted image paths of a frame directory (or the file itself). */
export function listFrames(input: string): string[] {
  if (statSync(input).isFile()) return [input]
  return readdirSync(input)
    .filter((f) => IMAGE_EXTS.has(extname(f).toLowerCase()))
    .sort()
    .map((f) => join(input, f))
}
