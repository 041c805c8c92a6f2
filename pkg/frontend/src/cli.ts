#!/usr/bin/env node
/** Command line: extract features from images/frames into a PFMNFEAT file. */

import { runExtraction } from './extract.js'
import { DEFAULT_ENCODER } from './encoder.js'

function usage(): never {
  console.error(
    'usage: pfmn-extract --input <file-or-dir> [--input ...] --mode pool|spatial ' +
      '[--grid] --out <file.feat> [--fps 5] [--source-fps N] [--seed N]',
  )
  process.exit(2)
}

export function main(argv: string[]): number {
  const inputs: string[] = []
  let mode: 'pool-vector' | 'spatial-map' | null = null
  let grid = false
  let out: string | null = null
  let fps = 5
  let sourceFps: number | undefined
  let seed = DEFAULT_ENCODER.seed

  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i]
    const next = () => {
      if (i + 1 >= argv.length) usage()
      return argv[++i]
    }
    if (arg === '--input') inputs.push(next())
    else if (arg === '--mode') {
      const v = next()
      if (v === 'pool') mode = 'pool-vector'
      else if (v === 'spatial') mode = 'spatial-map'
      else usage()
    } else if (arg === '--grid') grid = true
    else if (arg === '--out') out = next()
    else if (arg === '--fps') fps = Number(next())
    else if (arg === '--source-fps') sourceFps = Number(next())
    else if (arg === '--seed') seed = Number(next())
    else usage()
  }
  if (!inputs.length || !mode || !out) usage()

  try {
    const result = runExtraction({
      inputs,
      mode,
      grid,
      outPath: out,
      targetFps: fps,
      sourceFps,
      encoder: { ...DEFAULT_ENCODER, seed },
    })
    console.log(
      JSON.stringify({ out, shape: result.shape, config_hash: result.configHash }),
    )
    return 0
  } catch (err) {
    console.error(`error: ${(err as Error).message}`)
    return 1
  }
}

const isDirectRun = process.argv[1] && import.meta.url.endsWith(process.argv[1].split('/').pop()!)
if (isDirectRun) process.exit(main(process.argv.slice(2)))
