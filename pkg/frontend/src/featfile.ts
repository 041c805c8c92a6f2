/**
 * PFMNFEAT binary container (little-endian): magic `PFMNFEAT`, version u32,
 * kind u8, one u32 extent per axis, float32 payload. Kind 0 holds (n, 2048)
 * pool vectors; kind 1 holds (n, 81, 7, 7, 2048) per-candidate spatial maps.
 */

export const FEAT_MAGIC = 'PFMNFEAT'
export const FEAT_VERSION = 1

export const KIND_POOL = 0
export const KIND_SPATIAL = 1

export const POOL_DIM = 2048
export const GRID_SIZE = 81
export const MAP_SIDE = 7

const KIND_TAIL: Record<number, number[]> = {
  [KIND_POOL]: [POOL_DIM],
  [KIND_SPATIAL]: [GRID_SIZE, MAP_SIDE, MAP_SIDE, POOL_DIM],
}

export interface FeatureFile {
  kind: number
  shape: number[]
  data: Float32Array
}

export function encodeFeatures(kind: number, shape: number[], data: Float32Array): Buffer {
  const tail = KIND_TAIL[kind]
  if (!tail) throw new Error(`unknown feature kind ${kind}`)
  if (shape.length !== tail.length + 1 || !tail.every((d, i) => shape[i + 1] === d)) {
    throw new Error(`kind ${kind} expects shape (n, ${tail.join(', ')}), got (${shape.join(', ')})`)
  }
  if (shape[0] < 1) throw new Error('feature file needs at least one row')
  const count = shape.reduce((a, b) => a * b, 1)
  if (data.length !== count) {
    throw new Error(`payload has ${data.length} values, shape needs ${count}`)
  }
  const header = Buffer.alloc(8 + 4 + 1 + 4 * shape.length)
  header.write(FEAT_MAGIC, 0, 'ascii')
  header.writeUInt32LE(FEAT_VERSION, 8)
  header.writeUInt8(kind, 12)
  shape.forEach((extent, i) => header.writeUInt32LE(extent, 13 + 4 * i))
  const payload = Buffer.alloc(4 * count)
  for (let i = 0; i < count; i++) payload.writeFloatLE(data[i], 4 * i)
  return Buffer.concat([header, payload])
}

export function decodeFeatures(buf: Buffer): FeatureFile {
  let off = 0
  const need = (n: number, what: string) => {
    if (off + n > buf.length) {
      throw new Error(
        `truncated feature file: needed ${n} bytes for ${what} at offset ${off}, have ${buf.length}`,
      )
    }
    const start = off
    off += n
    return start
  }
  if (buf.toString('ascii', need(8, 'magic'), 8) !== FEAT_MAGIC) {
    throw new Error('bad feature magic')
  }
  const version = buf.readUInt32LE(need(4, 'version'))
  if (version !== FEAT_VERSION) throw new Error(`unsupported feature version ${version}`)
  const kind = buf.readUInt8(need(1, 'kind'))
  const tail = KIND_TAIL[kind]
  if (!tail) throw new Error(`unknown feature kind ${kind}`)
  const rank = tail.length + 1
  const shape: number[] = []
  for (let i = 0; i < rank; i++) shape.push(buf.readUInt32LE(need(4, 'extents')))
  if (!tail.every((d, i) => shape[i + 1] === d)) {
    throw new Error(`kind ${kind} extents (${shape.join(', ')}) do not match the contract`)
  }
  const count = shape.reduce((a, b) => a * b, 1)
  const start = need(4 * count, 'payload')
  if (off !== buf.length) throw new Error(`trailing ${buf.length - off} bytes in feature file`)
  const data = new Float32Array(count)
  for (let i = 0; i < count; i++) data[i] = buf.readFloatLE(start + 4 * i)
  return { kind, shape, data }
}
