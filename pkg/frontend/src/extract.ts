/**
 * Extraction jobs: turn images/frame directories into PFMNFEAT files.
 *
 * Pool mode emits one 2048-d vector per input image (n, 2048). Spatial mode
 * requires the NFOV grid and emits per-candidate maps (n, 81, 7, 7, 2048),
 * cropping each input as an equirectangular frame at the 81 grid viewpoints
 * in the shared lon-major order.
 */

import { writeFileSync } from 'node:fs'
import { DEFAULT_ENCODER, EncoderConfig, ImageEncoder, MAP_SIDE, POOL_DIM } from './encoder.js'
import { KIND_POOL, KIND_SPATIAL, encodeFeatures, GRID_SIZE } from './featfile.js'
import { DEFAULT_CROP, Raster, gnomonicCrop, viewpointGrid } from './grid.js'
import { listFrames, loadImage } from './images.js'

export interface ExtractionJob {
  inputs: string[]
  mode: 'pool-vector' | 'spatial-map'
  grid: boolean
  outPath: string
  targetFps: number
  /** subsample step when inputs are frame directories (sourceFps/targetFps) */
  sourceFps?: number
  encoder?: EncoderConfig
}

export interface ExtractionResult {
  shape: number[]
  configHash: string
  frames: string[]
}

function gatherFrames(job: ExtractionJob): string[] {
  const frames: string[] = []
  for (const input of job.inputs) frames.push(...listFrames(input))
  if (frames.length === 0) throw new Error('no input frames found')
  if (job.sourceFps && job.sourceFps > job.targetFps) {
    const step = Math.round(job.sourceFps / job.targetFps)
    return frames.filter((_, i) => i % step === 0)
  }
  return frames
}

export function runExtraction(job: ExtractionJob): ExtractionResult {
  if (job.mode === 'spatial-map' && !job.grid) {
    throw new Error('spatial-map mode requires the NFOV grid (its file kind is per-candidate)')
  }
  if (job.mode === 'pool-vector' && job.grid) {
    throw new Error('pool-vector mode is whole-image; disable the grid')
  }
  const frames = gatherFrames(job)
  const encoder = new ImageEncoder(job.encoder ?? DEFAULT_ENCODER)
  try {
    let shape: number[]
    let data: Float32Array
    if (job.mode === 'pool-vector') {
      shape = [frames.length, POOL_DIM]
      data = new Float32Array(frames.length * POOL_DIM)
      frames.forEach((path, i) => {
        data.set(encoder.poolVector(loadImage(path)), i * POOL_DIM)
      })
    } else {
      const grid = viewpointGrid()
      const mapLen = MAP_SIDE * MAP_SIDE * POOL_DIM
      shape = [frames.length, GRID_SIZE, MAP_SIDE, MAP_SIDE, POOL_DIM]
      data = new Float32Array(frames.length * GRID_SIZE * mapLen)
      frames.forEach((path, i) => {
        const erp: Raster = loadImage(path)
        grid.forEach((vp, j) => {
          const crop = gnomonicCrop(erp, vp, DEFAULT_CROP)
          data.set(encoder.spatialMap(crop), (i * GRID_SIZE + j) * mapLen)
        })
      })
    }
    const kind = job.mode === 'pool-vector' ? KIND_POOL : KIND_SPATIAL
    writeFileSync(job.outPath, encodeFeatures(kind, shape, data))
    const meta = {
      config_hash: encoder.configHash,
      encoder: encoder.config,
      mode: job.mode,
      grid: job.grid,
      target_fps: job.targetFps,
      frames: frames.length,
    }
    writeFileSync(job.outPath + '.meta.json', JSON.stringify(meta, null, 2))
    return { shape, configHash: encoder.configHash, frames }
  } finally {
    encoder.dispose()
  }
}
