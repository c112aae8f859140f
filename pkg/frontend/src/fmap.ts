/**
 * FMAP container writer/reader.
 *
 * Layout (all integers little-endian):
 *   magic "FMAP" | version u16=1 | image_id (u16 len + UTF-8)
 *   layer_count u16
 *   per layer: layer_id (u16 len + UTF-8), H u32, W u32, K u32,
 *              H*W*K float32 values, index (h, w, k) with k fastest.
 *
 * Values must be finite; the retrieval engine rejects NaN/Inf on read, so
 * the exporter refuses to produce them in the first place.
 */

export interface LayerActivation {
  layerId: string
  height: number
  width: number
  channels: number
  /** channel-last, row-major: index (h*W + w)*K + k */
  values: Float32Array
}

export interface FeatureMapSet {
  imageId: string
  layers: LayerActivation[]
}

const MAGIC = 'FMAP'
const VERSION = 1

function utf8(text: string): Buffer {
  return Buffer.from(text, 'utf-8')
}

export function encodeFeatureMapSet(set: FeatureMapSet): Buffer {
  if (set.layers.length === 0) {
    throw new Error(`${set.imageId}: cannot write a set with no layers`)
  }
  const seen = new Set<string>()
  let total = 4 + 2 + 2 + utf8(set.imageId).length + 2
  for (const layer of set.layers) {
    if (seen.has(layer.layerId)) {
      throw new Error(`${set.imageId}: duplicate layer id ${layer.layerId}`)
    }
    seen.add(layer.layerId)
    const expected = layer.height * layer.width * layer.channels
    if (layer.height < 1 || layer.width < 1 || layer.channels < 1) {
      throw new Error(`${layer.layerId}: zero dimension`)
    }
    if (layer.values.length !== expected) {
      throw new Error(
        `${layer.layerId}: ${layer.values.length} values for shape ` +
        `${layer.height}x${layer.width}x${layer.channels}`,
      )
    }
    total += 2 + utf8(layer.layerId).length + 12 + expected * 4
  }

  const buf = Buffer.alloc(total)
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength)
  let pos = 0
  buf.write(MAGIC, pos, 'ascii')
  pos += 4
  view.setUint16(pos, VERSION, true)
  pos += 2
  const imageId = utf8(set.imageId)
  view.setUint16(pos, imageId.length, true)
  pos += 2
  imageId.copy(buf, pos)
  pos += imageId.length
  view.setUint16(pos, set.layers.length, true)
  pos += 2

  for (const layer of set.layers) {
    const layerId = utf8(layer.layerId)
    view.setUint16(pos, layerId.length, true)
    pos += 2
    layerId.copy(buf, pos)
    pos += layerId.length
    view.setUint32(pos, layer.height, true)
    pos += 4
    view.setUint32(pos, layer.width, true)
    pos += 4
    view.setUint32(pos, layer.channels, true)
    pos += 4
    for (let i = 0; i < layer.values.length; i++) {
      const v = layer.values[i]
      if (!Number.isFinite(v)) {
        throw new Error(`${layer.layerId}: non-finite activation at flat index ${i}`)
      }
      view.setFloat32(pos, v, true)
      pos += 4
    }
  }
  return buf
}

/** Reader used by the tests to cross-check what was written. */
export function decodeFeatureMapSet(buf: Buffer): FeatureMapSet {
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength)
  if (buf.length < 4 || buf.toString('ascii', 0, 4) !== MAGIC) {
    throw new Error('bad magic')
  }
  let pos = 4
  const version = view.getUint16(pos, true)
  pos += 2
  if (version !== VERSION) throw new Error(`unsupported version ${version}`)
  const idLen = view.getUint16(pos, true)
  pos += 2
  const imageId = buf.toString('utf-8', pos, pos + idLen)
  pos += idLen
  const layerCount = view.getUint16(pos, true)
  pos += 2

  const layers: LayerActivation[] = []
  for (let i = 0; i < layerCount; i++) {
    const lidLen = view.getUint16(pos, true)
    pos += 2
    const layerId = buf.toString('utf-8', pos, pos + lidLen)
    pos += lidLen
    const height = view.getUint32(pos, true)
    pos += 4
    const width = view.getUint32(pos, true)
    pos += 4
    const channels = view.getUint32(pos, true)
    pos += 4
    const count = height * width * channels
    if (pos + count * 4 > buf.length) throw new Error(`${layerId}: truncated payload`)
    const values = new Float32Array(count)
    for (let j = 0; j < count; j++) {
      values[j] = view.getFloat32(pos, true)
      pos += 4
    }
    layers.push({ layerId, height, width, channels, values })
  }
  return { imageId, layers }
}
