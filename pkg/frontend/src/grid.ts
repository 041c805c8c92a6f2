/**
 * The 81-viewpoint candidate grid and gnomonic NFOV cropping, matching the
 * summarization pipeline's spherical conventions: longitude [0, 360) east,
 * latitude [-90, 90] north, candidates ordered lon-major ascending. ERP
 * rasters are row-major, row 0 at latitude +90, column 0 at the reference
 * meridian.
 */

export interface Viewpoint {
  lon: number
  lat: number
}

export const GRID_LONS = Array.from({ length: 9 }, (_, i) => i * 40)
export const GRID_LATS = [-75, -55, -35, -15, 0, 15, 35, 55, 75]

export function viewpointGrid(): Viewpoint[] {
  const grid: Viewpoint[] = []
  for (const lon of GRID_LONS) for (const lat of GRID_LATS) grid.push({ lon, lat })
  return grid
}

export interface Raster {
  width: number
  height: number
  channels: number
  /** HWC row-major, values in [0, 1] */
  data: Float32Array
}

const DEG = Math.PI / 180

/** Inverse gnomonic projection of tangent coordinates (u east, v north). */
export function gnomonicInverse(center: Viewpoint, u: number, v: number): Viewpoint {
  const rho = Math.hypot(u, v)
  const c = Math.atan(rho)
  const sinC = Math.sin(c)
  const cosC = Math.cos(c)
  const lat0 = center.lat * DEG
  const ratio = rho === 0 ? 0 : sinC / rho
  const lat = Math.asin(
    Math.max(-1, Math.min(1, cosC * Math.sin(lat0) + v * ratio * Math.cos(lat0))),
  )
  const lon =
    center.lon * DEG +
    Math.atan2(u * sinC, rho * Math.cos(lat0) * cosC - v * Math.sin(lat0) * sinC)
  return { lon: (((lon / DEG) % 360) + 360) % 360, lat: lat / DEG }
}

export function bilinearSample(erp: Raster, lon: number, lat: number, out: Float32Array, outOff: number): void {
  const row = ((90 - lat) / 180) * erp.height - 0.5
  const col = (((lon % 360) + 360) % 360 / 360) * erp.width - 0.5
  const r0 = Math.floor(row)
  const c0 = Math.floor(col)
  const fr = row - r0
  const fc = col - c0
  const rc0 = Math.min(Math.max(r0, 0), erp.height - 1)
  const rc1 = Math.min(Math.max(r0 + 1, 0), erp.height - 1)
  const cw0 = ((c0 % erp.width) + erp.width) % erp.width
  const cw1 = ((c0 + 1) % erp.width + erp.width) % erp.width
  const ch = erp.channels
  for (let k = 0; k < ch; k++) {
    const top =
      erp.data[(rc0 * erp.width + cw0) * ch + k] * (1 - fc) +
      erp.data[(rc0 * erp.width + cw1) * ch + k] * fc
    const bot =
      erp.data[(rc1 * erp.width + cw0) * ch + k] * (1 - fc) +
      erp.data[(rc1 * erp.width + cw1) * ch + k] * fc
    out[outOff + k] = top * (1 - fr) + bot * fr
  }
}

export interface CropSpec {
  hSpanDeg: number
  vSpanDeg: number
  outWidth: number
  outHeight: number
}

export const DEFAULT_CROP: CropSpec = { hSpanDeg: 54, vSpanDeg: 30, outWidth: 64, outHeight: 36 }

/** Rectilinear NFOV crop about a viewpoint, bilinear with longitude wrap. */
export function gnomonicCrop(erp: Raster, center: Viewpoint, spec: CropSpec = DEFAULT_CROP): Raster {
  const { outWidth: w, outHeight: h } = spec
  const umax = Math.tan((spec.hSpanDeg * DEG) / 2)
  const vmax = Math.tan((spec.vSpanDeg * DEG) / 2)
  const out = new Float32Array(w * h * erp.channels)
  for (let r = 0; r < h; r++) {
    const v = (1 - (2 * (r + 0.5)) / h) * vmax
    for (let c = 0; c < w; c++) {
      const u = ((2 * (c + 0.5)) / w - 1) * umax
      const dir = gnomonicInverse(center, u, v)
      bilinearSample(erp, dir.lon, dir.lat, out, (r * w + c) * erp.channels)
    }
  }
  return { width: w, height: h, channels: erp.channels, data: out }
}
