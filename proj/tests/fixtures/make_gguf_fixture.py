"""Writes tiny llama-style GGUF fixtures and reference logits.

    python3 make_gguf_fixture.py <fixtures/models>

tiny_f32.gguf and tiny_f16.gguf hold the same weights (rounded to f16 first,
so both files load to identical values). tiny_q4.gguf stores one tensor as
Q4_0. tiny_reference.json has logits from a float64 numpy forward pass.
"""

import json
import struct
import sys
from pathlib import Path

import numpy as np

N_LAYERS, D, N_HEADS, N_KV, FF, CTX = 2, 16, 4, 2, 32, 64
HD = D // N_HEADS
ROPE_BASE, EPS = 10000.0, 1e-5
ALIGN = 32


def byte_chars():
    bs = list(range(ord("!"), ord("~") + 1)) + list(range(ord("¡"), ord("¬") + 1)) + list(range(ord("®"), ord("ÿ") + 1))
    cs = bs[:]
    n = 0
    for b in range(256):
        if b not in bs:
            bs.append(b)
            cs.append(256 + n)
            n += 1
    return {b: chr(c) for b, c in zip(bs, cs)}


def vocab():
    bc = byte_chars()
    tokens = [bc[b] for b in range(256)]
    merges = ["Ġ t", "h e", "Ġt he", "Ġ c", "a t", "Ġc at"]
    tokens += ["Ġt", "he", "Ġthe", "Ġc", "at", "Ġcat", "<|endoftext|>"]
    types = [1] * (len(tokens) - 1) + [3]
    return tokens, types, merges


def weights(vocab_size):
    rng = np.random.default_rng(20240611)
    kv = N_KV * HD

    def w(*shape, s=0.3):
        return (rng.standard_normal(shape) * s).astype(np.float16).astype(np.float32)

    t = {"token_embd.weight": w(vocab_size, D, s=0.5)}
    for l in range(N_LAYERS):
        p = f"blk.{l}."
        t[p + "attn_norm.weight"] = (1.0 + w(D, s=0.1)).astype(np.float16).astype(np.float32)
        t[p + "attn_q.weight"] = w(D, D)
        t[p + "attn_k.weight"] = w(kv, D)
        t[p + "attn_v.weight"] = w(kv, D)
        t[p + "attn_output.weight"] = w(D, D)
        t[p + "ffn_norm.weight"] = (1.0 + w(D, s=0.1)).astype(np.float16).astype(np.float32)
        t[p + "ffn_gate.weight"] = w(FF, D)
        t[p + "ffn_up.weight"] = w(FF, D)
        t[p + "ffn_down.weight"] = w(D, FF)
    t["output_norm.weight"] = (1.0 + w(D, s=0.1)).astype(np.float16).astype(np.float32)
    t["output.weight"] = w(vocab_size, D, s=0.5)
    return t


def rms(x, g):
    return x / np.sqrt(np.mean(x * x) + EPS) * g


def rope(v, n_heads, pos):
    v = v.reshape(n_heads, HD).copy()
    for i in range(0, HD, 2):
        th = pos * ROPE_BASE ** (-i / HD)
        a, b = v[:, i].copy(), v[:, i + 1].copy()
        v[:, i] = a * np.cos(th) - b * np.sin(th)
        v[:, i + 1] = a * np.sin(th) + b * np.cos(th)
    return v


def reference_logits(t, ids):
    W = {k: v.astype(np.float64) for k, v in t.items()}
    keys = [[] for _ in range(N_LAYERS)]
    vals = [[] for _ in range(N_LAYERS)]
    out = []
    for pos, tok in enumerate(ids):
        x = W["token_embd.weight"][tok].copy()
        for l in range(N_LAYERS):
            p = f"blk.{l}."
            h = rms(x, W[p + "attn_norm.weight"])
            q = rope(W[p + "attn_q.weight"] @ h, N_HEADS, pos)
            k = rope(W[p + "attn_k.weight"] @ h, N_KV, pos)
            v = (W[p + "attn_v.weight"] @ h).reshape(N_KV, HD)
            keys[l].append(k)
            vals[l].append(v)
            K, V = np.stack(keys[l]), np.stack(vals[l])
            att = np.zeros((N_HEADS, HD))
            for hh in range(N_HEADS):
                kh = hh // (N_HEADS // N_KV)
                s = K[:, kh, :] @ q[hh] / np.sqrt(HD)
                s = np.exp(s - s.max())
                att[hh] = (s / s.sum()) @ V[:, kh, :]
            x = x + W[p + "attn_output.weight"] @ att.reshape(-1)
            h = rms(x, W[p + "ffn_norm.weight"])
            g = W[p + "ffn_gate.weight"] @ h
            u = W[p + "ffn_up.weight"] @ h
            x = x + W[p + "ffn_down.weight"] @ (g / (1.0 + np.exp(-g)) * u)
        out.append(W["output.weight"] @ rms(x, W["output_norm.weight"]))
    return np.array(out)


def s_str(s):
    b = s.encode("utf-8")
    return struct.pack("<Q", len(b)) + b


def kv_str(k, v):
    return s_str(k) + struct.pack("<I", 8) + s_str(v)


def kv_u32(k, v):
    return s_str(k) + struct.pack("<II", 4, v)


def kv_f32(k, v):
    return s_str(k) + struct.pack("<If", 6, v)


def kv_arr_str(k, vs):
    return s_str(k) + struct.pack("<IIQ", 9, 8, len(vs)) + b"".join(s_str(v) for v in vs)


def kv_arr_i32(k, vs):
    return s_str(k) + struct.pack("<IIQ", 9, 5, len(vs)) + b"".join(struct.pack("<i", v) for v in vs)


def q4_0(a):
    flat = a.reshape(-1, 32)
    out = b""
    for blk in flat:
        amax = blk[np.argmax(np.abs(blk))]
        d = amax / -8.0 if amax != 0 else 0.0
        inv = 1.0 / d if d != 0 else 0.0
        q = np.clip(np.floor(blk * inv + 8.5), 0, 15).astype(np.uint8)
        out += np.float16(d).tobytes() + bytes((q[:16] | (q[16:] << 4)).tolist())
    return out


def write_gguf(path, tensors, tokens, types, merges, dtype_of):
    meta = [
        kv_str("general.architecture", "llama"),
        kv_str("general.name", "tiny"),
        kv_u32("general.alignment", ALIGN),
        kv_u32("llama.block_count", N_LAYERS),
        kv_u32("llama.embedding_length", D),
        kv_u32("llama.attention.head_count", N_HEADS),
        kv_u32("llama.attention.head_count_kv", N_KV),
        kv_u32("llama.feed_forward_length", FF),
        kv_u32("llama.context_length", CTX),
        kv_f32("llama.rope.freq_base", ROPE_BASE),
        kv_f32("llama.attention.layer_norm_rms_epsilon", EPS),
        kv_str("tokenizer.ggml.model", "gpt2"),
        kv_arr_str("tokenizer.ggml.tokens", tokens),
        kv_arr_i32("tokenizer.ggml.token_type", types),
        kv_arr_str("tokenizer.ggml.merges", merges),
    ]
    infos, blobs, offset = [], [], 0
    for name, a in tensors.items():
        dt = dtype_of(name)
        if dt == 0:
            data = a.astype("<f4").tobytes()
        elif dt == 1:
            data = a.astype("<f2").tobytes()
        else:
            data = q4_0(a)
        dims = list(reversed(a.shape))
        infos.append(s_str(name) + struct.pack("<I", len(dims)) + b"".join(struct.pack("<Q", d) for d in dims)
                     + struct.pack("<IQ", dt, offset))
        pad = (-len(data)) % ALIGN
        blobs.append(data + b"\0" * pad)
        offset += len(data) + pad
    head = b"GGUF" + struct.pack("<IQQ", 3, len(tensors), len(meta)) + b"".join(meta) + b"".join(infos)
    head += b"\0" * ((-len(head)) % ALIGN)
    path.write_bytes(head + b"".join(blobs))


def main():
    out = Path(sys.argv[1])
    out.mkdir(parents=True, exist_ok=True)
    tokens, types, merges = vocab()
    t = weights(len(tokens))
    write_gguf(out / "tiny_f32.gguf", t, tokens, types, merges, lambda n: 0)
    write_gguf(out / "tiny_f16.gguf", t, tokens, types, merges, lambda n: 0 if n.endswith("norm.weight") else 1)
    write_gguf(out / "tiny_q4.gguf", t, tokens, types, merges, lambda n: 2 if n == "blk.0.ffn_up.weight" else 0)
    ids = [256 + 5, 256 + 2, 72, 101, 108, 108, 111, 256 + 5, 256 + 6, 33]
    ref = {
        "tokens": ids,
        "logits": reference_logits(t, ids).tolist(),
        "encode": [{"text": " the cat", "ids": [256 + 2, 256 + 5]}, {"text": "hat", "ids": [ord("h"), 256 + 4]}],
    }
    (out / "tiny_reference.json").write_text(json.dumps(ref, indent=1) + "\n")


if __name__ == "__main__":
    main()
