/**
 * Backbone construction and intermediate-layer capture.
 *
 * Three sources, in order of what `--model` looks like:
 *   - "stub": a tiny built-in convnet with deterministic seeded weights,
 *     so CI needs no downloads and produces byte-identical activations
 *   - a path to a model-exchange JSON file (same structure as the stub
 *     spec below, with its own seed/layers)
 *   - an http(s) URL passed straight to tf.loadLayersModel
 */

import * as tf from '@tensorflow/tfjs'
import * as fs from 'fs'

export interface ExchangeLayer {
  type: 'conv2d' | 'maxPool' | 'avgPool'
  name: string
  filters?: number
  kernelSize?: number
  poolSize?: number
  activation?: 'relu' | 'linear'
  /** conv2d only: center-tap identity kernel + zero bias instead of seeded weights */
  identityInit?: boolean
}

export interface ModelExchange {
  seed: number
  layers: ExchangeLayer[]
}

export const STUB_SPEC: ModelExchange = {
  seed: 1337,
  layers: [
    { type: 'conv2d', name: 'conv_a', filters: 8, kernelSize: 3, activation: 'relu' },
    { type: 'maxPool', name: 'pool_a', poolSize: 2 },
    { type: 'conv2d', name: 'conv_b', filters: 16, kernelSize: 3, activation: 'relu' },
  ],
}

/** mulberry32: tiny deterministic PRNG, uniform in [0, 1). */
function mulberry32(seed: number): () => number {
  let a = seed >>> 0
  return () => {
    a |= 0
    a = (a + 0x6d2b79f5) | 0
    let t = Math.imul(a ^ (a >>> 15), 1 | a)
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296
  }
}

function seededWeights(shape: number[], rand: () => number): tf.Tensor {
  const size = shape.reduce((a, b) => a * b, 1)
  const values = new Float32Array(size)
  for (let i = 0; i < size; i++) {
    values[i] = Math.fround((rand() - 0.5) * 0.8)
  }
  return tf.tensor(values, shape)
}

export function buildFromExchange(spec: ModelExchange, inputSize: number): tf.LayersModel {
  const input = tf.input({ shape: [inputSize, inputSize, 3] })
  let x: tf.SymbolicTensor = input
  for (const layer of spec.layers) {
    if (layer.type === 'conv2d') {
      x = tf.layers
        .conv2d({
          name: layer.name,
          filters: layer.filters ?? 8,
          kernelSize: layer.kernelSize ?? 3,
          activation: layer.activation ?? 'relu',
          useBias: true,
        })
        .apply(x) as tf.SymbolicTensor
    } else if (layer.type === 'maxPool') {
      x = tf.layers
        .maxPooling2d({ name: layer.name, poolSize: layer.poolSize ?? 2 })
        .apply(x) as tf.SymbolicTensor
    } else {
      x = tf.layers
        .averagePooling2d({ name: layer.name, poolSize: layer.poolSize ?? 2 })
        .apply(x) as tf.SymbolicTensor
    }
  }
  const model = tf.model({ inputs: input, outputs: x })

  const identityNames = new Set(
    spec.layers.filter(l => l.type === 'conv2d' && l.identityInit).map(l => l.name),
  )
  const rand = mulberry32(spec.seed)
  for (const layer of model.layers) {
    const current = layer.getWeights()
    if (current.length === 0) continue
    if (identityNames.has(layer.name)) {
      layer.setWeights(current.map(w => identityWeights(w.shape)))
    } else {
      layer.setWeights(current.map(w => seededWeights(w.shape, rand)))
    }
  }
  return model
}

function identityWeights(shape: number[]): tf.Tensor {
  if (shape.length === 1) {
    return tf.zeros(shape) // bias
  }
  const [kh, kw, inC, outC] = shape
  const values = new Float32Array(kh * kw * inC * outC)
  const cy = Math.floor(kh / 2)
  const cx = Math.floor(kw / 2)
  for (let c = 0; c < Math.min(inC, outC); c++) {
    values[((cy * kw + cx) * inC + c) * outC + c] = 1
  }
  return tf.tensor(values, shape)
}

export async function loadBackbone(name: string, inputSize: number): Promise<tf.LayersModel> {
  if (name === 'stub') {
    return buildFromExchange(STUB_SPEC, inputSize)
  }
  if (/^https?:\/\//.test(name)) {
    return tf.loadLayersModel(name)
  }
  const spec = JSON.parse(fs.readFileSync(name, 'utf-8')) as ModelExchange
  if (!Array.isArray(spec.layers) || typeof spec.seed !== 'number') {
    throw new Error(`${name}: not a model-exchange file (need {seed, layers})`)
  }
  return buildFromExchange(spec, inputSize)
}

/**
 * Multi-output model that emits the named layers' activations.
 * Every missing name is listed in one error, before any inference runs.
 */
export function captureModel(model: tf.LayersModel, layerNames: string[]): tf.LayersModel {
  const available = new Set(model.layers.map(l => l.name))
  const missing = layerNames.filter(n => !available.has(n))
  if (missing.length > 0) {
    throw new Error(
      `capture layers not in model: ${missing.join(', ')} ` +
      `(available: ${[...available].join(', ')})`,
    )
  }
  const outputs = layerNames.map(
    n => model.getLayer(n).output as tf.SymbolicTensor,
  )
  return tf.model({ inputs: model.inputs, outputs })
}
