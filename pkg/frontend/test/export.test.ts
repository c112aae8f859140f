/**
 * Exporter tests, including the cross-component handshake: files written
 * here must validate in the retrieval engine, and the engine's MAC output
 * must agree with the exporter's own per-channel maxima.
 */

import { execFileSync } from 'child_process'
import * as fs from 'fs'
import * as os from 'os'
import * as path from 'path'
import { PNG } from 'pngjs'
import { afterAll, beforeAll, describe, expect, it } from 'vitest'
import { decodeFeatureMapSet } from '../src/fmap'
import { exportActivations, perChannelMax } from '../src/export'

const PYTHON = process.env.PYTHON ?? 'python3'
const LAYERS = ['conv_a', 'conv_b']
const N_IMAGES = 10

let workDir: string
let imageDir: string
let fmapDir: string

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

function writeRandomPng(target: string, width: number, height: number, seed: number): void {
  const png = new PNG({ width, height })
  const rand = mulberry32(seed)
  for (let i = 0; i < width * height; i++) {
    png.data[i * 4] = Math.floor(rand() * 256)
    png.data[i * 4 + 1] = Math.floor(rand() * 256)
    png.data[i * 4 + 2] = Math.floor(rand() * 256)
    png.data[i * 4 + 3] = 255
  }
  fs.writeFileSync(target, PNG.sync.write(png))
}

function runPrimary(args: string[]): string {
  return execFileSync(PYTHON, ['-m', 'cbirkit.cli', ...args], { encoding: 'utf-8' })
}

/** DESC record parser (magic, version u16, dim u32, records until EOF). */
function parseDesc(buf: Buffer): Map<string, Float32Array> {
  expect(buf.toString('ascii', 0, 4)).toBe('DESC')
  expect(buf.readUInt16LE(4)).toBe(1)
  const dim = buf.readUInt32LE(6)
  const records = new Map<string, Float32Array>()
  let pos = 10
  while (pos < buf.length) {
    const idLen = buf.readUInt16LE(pos)
    pos += 2
    const imageId = buf.toString('utf-8', pos, pos + idLen)
    pos += idLen
    const values = new Float32Array(dim)
    for (let i = 0; i < dim; i++) {
      values[i] = buf.readFloatLE(pos)
      pos += 4
    }
    records.set(imageId, values)
  }
  return records
}

beforeAll(async () => {
  workDir = fs.mkdtempSync(path.join(os.tmpdir(), 'fmap-export-'))
  imageDir = path.join(workDir, 'images')
  fmapDir = path.join(workDir, 'fmaps')
  fs.mkdirSync(imageDir)
  for (let i = 0; i < N_IMAGES; i++) {
    // mixed sizes so the resize path gets exercised too
    const side = i % 3 === 0 ? 24 : 32
    writeRandomPng(path.join(imageDir, `img_${String(i).padStart(2, '0')}.png`), side, side, 100 + i)
  }
  const count = await exportActivations(imageDir, {
    model: 'stub',
    layers: LAYERS,
    size: 32,
    outDir: fmapDir,
  })
  expect(count).toBe(N_IMAGES)
}, 120_000)

afterAll(() => {
  fs.rmSync(workDir, { recursive: true, force: true })
})

describe('exported FMAP files', () => {
  it('one file per image, layers in spec order', () => {
    const files = fs.readdirSync(fmapDir).sort()
    expect(files).toHaveLength(N_IMAGES)
    for (const file of files) {
      const set = decodeFeatureMapSet(fs.readFileSync(path.join(fmapDir, file)))
      expect(set.imageId).toBe(path.basename(file, '.fmap'))
      expect(set.layers.map(l => l.layerId)).toEqual(LAYERS)
    }
  })

  it('validate in the retrieval engine and match its MAC within 1e-5', () => {
    const configPath = path.join(workDir, 'mac.json')
    fs.writeFileSync(
      configPath,
      JSON.stringify({ fusion: { branches: [{ kind: 'MAC' }], final_normalize: false } }),
    )
    const descPath = path.join(workDir, 'mac.desc')
    // the engine's extract validates every file; a malformed one would exit 2
    runPrimary(['extract', '--fmaps', fmapDir, '--config', configPath, '--out', descPath])
    const records = parseDesc(fs.readFileSync(descPath))
    expect(records.size).toBe(N_IMAGES)

    for (const file of fs.readdirSync(fmapDir)) {
      const set = decodeFeatureMapSet(fs.readFileSync(path.join(fmapDir, file)))
      const engineMac = records.get(set.imageId)!
      expect(engineMac).toBeDefined()
      // engine MAC = concatenated per-layer maxima, layer order preserved
      let offset = 0
      for (const layer of set.layers) {
        const mine = perChannelMax(layer)
        for (let k = 0; k < layer.channels; k++) {
          expect(Math.abs(engineMac[offset + k] - mine[k])).toBeLessThanOrEqual(1e-5)
        }
        offset += layer.channels
      }
      expect(offset).toBe(engineMac.length)
    }
  }, 120_000)

  it('random activation reads back bit-for-bit through the engine', () => {
    const rand = mulberry32(7)
    for (const file of fs.readdirSync(fmapDir)) {
      const set = decodeFeatureMapSet(fs.readFileSync(path.join(fmapDir, file)))
      const layer = set.layers[Math.floor(rand() * set.layers.length)]
      const h = Math.floor(rand() * layer.height)
      const w = Math.floor(rand() * layer.width)
      const k = Math.floor(rand() * layer.channels)
      const mine = layer.values[(h * layer.width + w) * layer.channels + k]

      const script = [
        'import struct, sys',
        'from cbirkit.feature_io import read_feature_map_file',
        'fmap_set = read_feature_map_file(sys.argv[1])',
        'fmap = fmap_set.layer(sys.argv[2])',
        'value = fmap.values[int(sys.argv[3]), int(sys.argv[4]), int(sys.argv[5])]',
        "print(struct.pack('<f', float(value)).hex())",
      ].join('\n')
      const got = execFileSync(
        PYTHON,
        ['-c', script, path.join(fmapDir, file), layer.layerId, String(h), String(w), String(k)],
        { encoding: 'utf-8' },
      ).trim()

      const expected = Buffer.alloc(4)
      expected.writeFloatLE(mine)
      expect(got).toBe(expected.toString('hex'))
    }
  }, 120_000)

  it('re-exporting produces byte-identical files', async () => {
    const secondDir = path.join(workDir, 'fmaps2')
    const count = await exportActivations(imageDir, {
      model: 'stub',
      layers: LAYERS,
      size: 32,
      outDir: secondDir,
    })
    expect(count).toBe(N_IMAGES)
    for (const file of fs.readdirSync(fmapDir)) {
      const a = fs.readFileSync(path.join(fmapDir, file))
      const b = fs.readFileSync(path.join(secondDir, file))
      expect(a.equals(b)).toBe(true)
    }
  }, 120_000)
})

describe('failure modes', () => {
  it('lists every missing capture layer and writes nothing', async () => {
    const outDir = path.join(workDir, 'never')
    await expect(
      exportActivations(imageDir, {
        model: 'stub',
        layers: ['conv_a', 'nope_1', 'nope_2'],
        size: 32,
        outDir,
      }),
    ).rejects.toThrow(/nope_1, nope_2/)
    expect(fs.existsSync(outDir)).toBe(false)
  })

  it('rejects undecodable images by name', async () => {
    const badDir = path.join(workDir, 'badimages')
    fs.mkdirSync(badDir)
    fs.writeFileSync(path.join(badDir, 'broken.png'), Buffer.from('not a png'))
    await expect(
      exportActivations(badDir, { model: 'stub', layers: LAYERS, size: 32, outDir: path.join(workDir, 'never2') }),
    ).rejects.toThrow(/broken\.png/)
  })
})

describe('identity-initialized stub', () => {
  it('constant gray image -> constant maps -> engine MAC returns constants', async () => {
    const grayDir = path.join(workDir, 'gray')
    const grayOut = path.join(workDir, 'grayfmaps')
    fs.mkdirSync(grayDir)
    const png = new PNG({ width: 16, height: 16 })
    png.data.fill(128)
    for (let i = 0; i < 16 * 16; i++) png.data[i * 4 + 3] = 255
    fs.writeFileSync(path.join(grayDir, 'gray.png'), PNG.sync.write(png))

    const exchangePath = path.join(workDir, 'identity.json')
    fs.writeFileSync(
      exchangePath,
      JSON.stringify({
        seed: 0,
        layers: [
          { type: 'conv2d', name: 'id_conv', filters: 3, kernelSize: 1, activation: 'linear', identityInit: true },
        ],
      }),
    )
    await exportActivations(grayDir, {
      model: exchangePath,
      layers: ['id_conv'],
      size: 16,
      outDir: grayOut,
    })

    const set = decodeFeatureMapSet(fs.readFileSync(path.join(grayOut, 'gray.fmap')))
    const gray = Math.fround(128 / 255)
    for (const v of set.layers[0].values) {
      expect(v).toBe(gray)
    }

    const configPath = path.join(workDir, 'gray-mac.json')
    fs.writeFileSync(
      configPath,
      JSON.stringify({ fusion: { branches: [{ kind: 'MAC' }], final_normalize: false } }),
    )
    const descPath = path.join(workDir, 'gray.desc')
    runPrimary(['extract', '--fmaps', grayOut, '--config', configPath, '--out', descPath])
    const records = parseDesc(fs.readFileSync(descPath))
    const engineMac = records.get('gray')!
    expect(engineMac).toHaveLength(3)
    for (const v of engineMac) {
      expect(v).toBe(gray)
    }
  }, 120_000)
})
