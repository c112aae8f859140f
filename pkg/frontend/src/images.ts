/**
 * PNG decoding and preprocessing.
 *
 * Preprocessing is pinned for reproducibility: RGB in [0, 1] (alpha
 * dropped), bilinear resize without corner alignment to size x size.
 */

import * as tf from '@tensorflow/tfjs'
import * as fs from 'fs'
import { PNG } from 'pngjs'

export function decodePng(path: string): tf.Tensor3D {
  let png: PNG
  try {
    png = PNG.sync.read(fs.readFileSync(path))
  } catch (err) {
    throw new Error(`${path}: not a decodable PNG (${(err as Error).message})`)
  }
  const { width, height, data } = png
  const rgb = new Float32Array(width * height * 3)
  for (let i = 0; i < width * height; i++) {
    rgb[i * 3] = data[i * 4] / 255
    rgb[i * 3 + 1] = data[i * 4 + 1] / 255
    rgb[i * 3 + 2] = data[i * 4 + 2] / 255
  }
  return tf.tensor3d(rgb, [height, width, 3])
}

export function loadImageResized(path: string, size: number): tf.Tensor3D {
  const raw = decodePng(path)
  if (raw.shape[0] === size && raw.shape[1] === size) {
    return raw
  }
  const resized = tf.image.resizeBilinear(raw, [size, size], false)
  raw.dispose()
  return resized
}
