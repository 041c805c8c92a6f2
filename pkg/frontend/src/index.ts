export * from './featfile.js'
export * from './grid.js'
export { ImageEncoder, EncoderConfig, DEFAULT_ENCODER, INPUT_SIDE, mulberry32 } from './encoder.js'
export * from './images.js'
export * from './extract.js'
