/**
 * Deterministic convolutional image encoder producing the pipeline's two
 * feature flavors: a 2048-d pooled vector and a 7x7x2048 spatial map.
 *
 * Weights are generated from a seeded PRNG at construction, so features are
 * a pure function of (encoder config, image bytes); the config hash pins the
 * exact encoder in the output sidecar. Inference runs on the tfjs CPU
 * backend, which is deterministic across runs.
 */

import * as tf from '@tensorflow/tfjs'
import { createHash } from 'node:crypto'
import type { Raster } from './grid.js'
import { MAP_SIDE, POOL_DIM } from './featfile.js'

export { MAP_SIDE, POOL_DIM } from './featfile.js'
export const INPUT_SIDE = 56

interface ConvLayer {
  kernel: tf.Tensor4D
  stride: number
}

export interface EncoderConfig {
  seed: number
  inputSide: number
  channels: number[]
}

export const DEFAULT_ENCODER: EncoderConfig = {
  seed: 0x5eed,
  inputSide: INPUT_SIDE,
  channels: [32, 64, 128],
}

/** Deterministic 32-bit PRNG (mulberry32). */
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0
  return () => {
    a = (a + 0x6d2b79f5) >>> 0
    let t = a
    t = Math.imul(t ^ (t >>> 15), t | 1)
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61)
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296
  }
}

function gaussianArray(rand: () => number, count: number, std: number): Float32Array {
  const out = new Float32Array(count)
  for (let i = 0; i < count; i += 2) {
    // Box-Muller from two uniforms
    const u1 = Math.max(rand(), 1e-12)
    const u2 = rand()
    const r = Math.sqrt(-2 * Math.log(u1))
    out[i] = r * Math.cos(2 * Math.PI * u2) * std
    if (i + 1 < count) out[i + 1] = r * Math.sin(2 * Math.PI * u2) * std
  }
  return out
}

export class ImageEncoder {
  readonly config: EncoderConfig
  readonly configHash: string
  private layers: ConvLayer[]
  private projection: tf.Tensor4D

  constructor(config: EncoderConfig = DEFAULT_ENCODER) {
    this.config = config
    this.configHash = createHash('sha256')
      .update(JSON.stringify({ arch: 'strided-conv-v1', ...config }))
      .digest('hex')
    const rand = mulberry32(config.seed)
    this.layers = []
    let cin = 3
    for (const cout of config.channels) {
      const fanIn = 3 * 3 * cin
      const data = gaussianArray(rand, 3 * 3 * cin * cout, Math.sqrt(2 / fanIn))
      this.layers.push({ kernel: tf.tensor4d(data, [3, 3, cin, cout]), stride: 2 })
      cin = cout
    }
    const projData = gaussianArray(rand, cin * POOL_DIM, Math.sqrt(2 / cin))
    this.projection = tf.tensor4d(projData, [1, 1, cin, POOL_DIM])
  }

  /** 7x7x2048 spatial map of one raster (HWC floats in [0, 1]). */
  spatialMap(image: Raster): Float32Array {
    const result = tf.tidy(() => {
      let x = tf.tensor3d(this.toRgb(image), [image.height, image.width, 3])
      x = tf.image.resizeBilinear(x, [this.config.inputSide, this.config.inputSide])
      let batch = x.expandDims(0) as tf.Tensor4D
      for (const layer of this.layers) {
        batch = tf.relu(tf.conv2d(batch, layer.kernel, layer.stride, 'same'))
      }
      batch = tf.conv2d(batch, this.projection, 1, 'same')
      return batch.squeeze([0]) as tf.Tensor3D
    })
    const [h, w, c] = result.shape
    if (h !== MAP_SIDE || w !== MAP_SIDE || c !== POOL_DIM) {
      result.dispose()
      throw new Error(`encoder produced ${h}x${w}x${c}, expected ${MAP_SIDE}x${MAP_SIDE}x${POOL_DIM}`)
    }
    const data = result.dataSync() as Float32Array
    result.dispose()
    return Float32Array.from(data)
  }

  /** 2048-d pooled feature: global average of the spatial map. */
  poolVector(image: Raster): Float32Array {
    const map = this.spatialMap(image)
    const out = new Float32Array(POOL_DIM)
    const cells = MAP_SIDE * MAP_SIDE
    for (let p = 0; p < cells; p++) {
      for (let k = 0; k < POOL_DIM; k++) out[k] += map[p * POOL_DIM + k]
    }
    for (let k = 0; k < POOL_DIM; k++) out[k] /= cells
    return out
  }

  private toRgb(image: Raster): Float32Array {
    if (image.channels === 3) return image.data
    const out = new Float32Array(image.width * image.height * 3)
    for (let p = 0; p < image.width * image.height; p++) {
      const v = image.data[p * image.channels]
      out[3 * p] = v
      out[3 * p + 1] = v
      out[3 * p + 2] = v
    }
    return out
  }

  dispose(): void {
    this.layers.forEach((l) => l.kernel.dispose())
    this.projection.dispose()
  }
}
