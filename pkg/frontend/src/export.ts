/**
 * Export intermediate CNN activations for a folder of images as FMAP files.
 *
 * Usage:
 *   export --images DIR --layers conv_a,conv_b --out DIR
 *          [--model stub|exchange.json|URL] [--size 64] [--batch 8]
 *
 * One FMAP file per image (image_id = file stem), capture layers in the
 * order given. Activations are written channel-last exactly as the
 * retrieval engine's FMAP reader expects them.
 */

import * as tf from '@tensorflow/tfjs'
import * as fs from 'fs'
import * as path from 'path'
import { encodeFeatureMapSet, LayerActivation } from './fmap'
import { loadImageResized } from './images'
import { captureModel, loadBackbone } from './model'

export interface ExportSpec {
  model: string
  layers: string[]
  size: number
  outDir: string
  batchSize?: number
}

/** Per-channel spatial maximum; the cross-component handshake oracle. */
export function perChannelMax(layer: LayerActivation): Float32Array {
  const { height, width, channels, values } = layer
  const out = new Float32Array(channels).fill(-Infinity)
  for (let h = 0; h < height; h++) {
    for (let w = 0; w < width; w++) {
      const base = (h * width + w) * channels
      for (let k = 0; k < channels; k++) {
        if (values[base + k] > out[k]) out[k] = values[base + k]
      }
    }
  }
  return out
}

function listPngs(imageDir: string): string[] {
  const files = fs
    .readdirSync(imageDir)
    .filter(f => f.toLowerCase().endsWith('.png'))
    .sort()
  if (files.length === 0) {
    throw new Error(`${imageDir}: no .png images found`)
  }
  return files.map(f => path.join(imageDir, f))
}

export async function exportActivations(imageDir: string, spec: ExportSpec): Promise<number> {
  const backbone = await loadBackbone(spec.model, spec.size)
  const capture = captureModel(backbone, spec.layers) // rejects bad names up front
  const files = listPngs(imageDir)
  fs.mkdirSync(spec.outDir, { recursive: true })

  const batchSize = spec.batchSize ?? 8
  let written = 0
  for (let start = 0; start < files.length; start += batchSize) {
    const batchFiles = files.slice(start, start + batchSize)
    const images = batchFiles.map(f => loadImageResized(f, spec.size))
    const batch = tf.stack(images) as tf.Tensor4D
    images.forEach(t => t.dispose())

    const raw = capture.predict(batch) as tf.Tensor | tf.Tensor[]
    const outputs = Array.isArray(raw) ? raw : [raw]
    batch.dispose()

    const perLayerData = outputs.map(t => {
      if (t.shape.length !== 4) {
        throw new Error(`captured tensor is not 4-D (batch, H, W, K): ${t.shape}`)
      }
      return {
        shape: t.shape as [number, number, number, number],
        data: t.dataSync() as Float32Array,
      }
    })
    outputs.forEach(t => t.dispose())

    batchFiles.forEach((file, i) => {
      const imageId = path.basename(file, path.extname(file))
      const layers: LayerActivation[] = perLayerData.map((layerOut, j) => {
        const [, height, width, channels] = layerOut.shape
        const planeSize = height * width * channels
        return {
          layerId: spec.layers[j],
          height,
          width,
          channels,
          values: layerOut.data.slice(i * planeSize, (i + 1) * planeSize),
        }
      })
      const target = path.join(spec.outDir, `${imageId}.fmap`)
      fs.writeFileSync(target, encodeFeatureMapSet({ imageId, layers }))
      written++
      process.stderr.write(`exported ${imageId} (${layers.length} layers)\n`)
    })
  }
  return written
}

// ---------------------------------------------------------------------------
// CLI
// ---------------------------------------------------------------------------

function parseArgs(argv: string[]): { images: string; spec: ExportSpec } {
  const opts = new Map<string, string>()
  for (let i = 0; i < argv.length; i += 2) {
    if (!argv[i].startsWith('--') || i + 1 >= argv.length) {
      throw new Error(`usage: export --images DIR --layers a,b --out DIR ` +
        `[--model stub] [--size 299] [--batch 8]`)
    }
    opts.set(argv[i].slice(2), argv[i + 1])
  }
  for (const required of ['images', 'layers', 'out']) {
    if (!opts.has(required)) throw new Error(`missing --${required}`)
  }
  return {
    images: opts.get('images')!,
    spec: {
      model: opts.get('model') ?? 'stub',
      layers: opts.get('layers')!.split(',').filter(s => s.length > 0),
      size: parseInt(opts.get('size') ?? '299', 10),
      outDir: opts.get('out')!,
      batchSize: parseInt(opts.get('batch') ?? '8', 10),
    },
  }
}

if (require.main === module) {
  const { images, spec } = parseArgs(process.argv.slice(2))
  exportActivations(images, spec)
    .then(count => {
      process.stderr.write(`wrote ${count} FMAP files to ${spec.outDir}\n`)
    })
    .catch(err => {
      process.stderr.write(`error: ${(err as Error).message}\n`)
      process.exit(1)
    })
}
