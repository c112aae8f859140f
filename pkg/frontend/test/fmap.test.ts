import { describe, expect, it } from 'vitest'
import { decodeFeatureMapSet, encodeFeatureMapSet, FeatureMapSet } from '../src/fmap'

function sampleSet(): FeatureMapSet {
  return {
    imageId: 'bird_42',
    layers: [
      {
        layerId: 'conv_a',
        height: 2,
        width: 3,
        channels: 2,
        values: new Float32Array([1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12]),
      },
      {
        layerId: 'conv_b',
        height: 1,
        width: 1,
        channels: 4,
        values: new Float32Array([0.25, -1.5, 3.75, 0]),
      },
    ],
  }
}

describe('FMAP encoding', () => {
  it('round-trips structurally and byte-identically', () => {
    const original = sampleSet()
    const encoded = encodeFeatureMapSet(original)
    const decoded = decodeFeatureMapSet(encoded)
    expect(decoded.imageId).toBe(original.imageId)
    expect(decoded.layers.map(l => l.layerId)).toEqual(['conv_a', 'conv_b'])
    decoded.layers.forEach((layer, i) => {
      expect([...layer.values]).toEqual([...original.layers[i].values])
    })
    expect(encodeFeatureMapSet(decoded).equals(encoded)).toBe(true)
  })

  it('starts with the magic and version', () => {
    const encoded = encodeFeatureMapSet(sampleSet())
    expect(encoded.toString('ascii', 0, 4)).toBe('FMAP')
    expect(encoded.readUInt16LE(4)).toBe(1)
  })

  it('places element (h, w, k) at payload offset ((h*W + w)*K + k) * 4', () => {
    const height = 3
    const width = 4
    const channels = 5
    const values = new Float32Array(height * width * channels)
    const h = 1
    const w = 2
    const k = 3
    values[(h * width + w) * channels + k] = 9.5
    const encoded = encodeFeatureMapSet({
      imageId: 'd',
      layers: [{ layerId: 'L', height, width, channels, values }],
    })
    const payload = encoded.subarray(encoded.length - values.length * 4)
    for (let i = 0; i < values.length; i++) {
      const expected = i === (h * width + w) * channels + k ? 9.5 : 0
      expect(payload.readFloatLE(i * 4)).toBe(expected)
    }
  })

  it('rejects non-finite values, empty sets, and shape mismatches', () => {
    expect(() => encodeFeatureMapSet({ imageId: 'x', layers: [] })).toThrow(/no layers/)
    expect(() =>
      encodeFeatureMapSet({
        imageId: 'x',
        layers: [{ layerId: 'L', height: 1, width: 1, channels: 1, values: new Float32Array([NaN]) }],
      }),
    ).toThrow(/non-finite/)
    expect(() =>
      encodeFeatureMapSet({
        imageId: 'x',
        layers: [{ layerId: 'L', height: 2, width: 2, channels: 1, values: new Float32Array(3) }],
      }),
    ).toThrow(/values for shape/)
  })
})
