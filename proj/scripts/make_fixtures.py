#!/usr/bin/env python3
"""Regenerate the reference fixtures under tests/fixtures.

  hf_tiny_tied/, hf_tiny_untied/  tiny random GPT-2 checkpoints written by
                                  transformers, plus expected.json with float64
                                  logits, hidden states and attention weights
  tokenizer_oracle.json           GPT2Tokenizer ids for a set of strings

Needs torch, transformers and safetensors.
"""

import json
import pathlib

import torch
from transformers import GPT2Config, GPT2LMHeadModel, GPT2Tokenizer

ROOT = pathlib.Path(__file__).resolve().parent.parent
FIX = ROOT / "tests" / "fixtures"

INPUTS = [
    [5, 17, 3, 42, 8, 60, 11],
    [1],
    [90, 2, 2, 2, 33],
]


def tiny(tied, seed):
    torch.manual_seed(seed)
    cfg = GPT2Config(
        vocab_size=97,
        n_positions=16,
        n_embd=16,
        n_layer=2,
        n_head=2,
        n_inner=40,
        activation_function="gelu_new",
        resid_pdrop=0.0,
        embd_pdrop=0.0,
        attn_pdrop=0.0,
        layer_norm_epsilon=1e-5,
        tie_word_embeddings=tied,
        attn_implementation="eager",
    )
    model = GPT2LMHeadModel(cfg)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if "ln" in name and name.endswith("weight"):
                p.copy_(1.0 + 0.2 * torch.randn_like(p))
            elif name.endswith("bias"):
                p.copy_(0.1 * torch.randn_like(p))
            else:
                p.copy_(0.3 * torch.randn_like(p))
    return model.eval()


def dump_model(tied, seed, out):
    model = tiny(tied, seed)
    out.mkdir(parents=True, exist_ok=True)
    model.save_pretrained(out, safe_serialization=True)
    for extra in ("generation_config.json",):
        (out / extra).unlink(missing_ok=True)

    ref = model.double()
    cases = []
    with torch.no_grad():
        for ids in INPUTS:
            res = ref(torch.tensor([ids]), output_hidden_states=True, output_attentions=True)
            hidden = [h[0].tolist() for h in res.hidden_states]
            cases.append(
                {
                    "ids": ids,
                    "logits": res.logits[0].tolist(),
                    # residual stream before each block; the last entry is after ln_f
                    "hidden_states": hidden,
                    "attentions": [a[0].tolist() for a in res.attentions],
                }
            )
    (out / "expected.json").write_text(json.dumps({"cases": cases}))


STRINGS = [
    "A report about the Impressionists has",
    " report",
    " has",
    " have",
    "Hello world",
    "Hello, world!",
    "  leading spaces",
    "trailing spaces   ",
    "tabs\tand\nnewlines\n\n",
    "don't won't they'll I'm you're we've he'd",
    "DON'T SHOUT",
    "numbers 123 4567 89012345",
    "3.14159 and 2,718",
    "email@example.com",
    "https://example.com/path?q=1&r=2",
    "café naïve résumé",
    "über straße",
    "日本語のテキスト",
    "Привет мир",
    "emoji \U0001f600\U0001f44d\U0001f3fd",
    "mixed nbsp",
    "C++ and C# are languages.",
    "   ",
    "\n",
    "a",
    "",
    "The keys to the cabinet are on the table.",
    "When Mary and John went to the store, John gave a drink to",
    "After the lunch, Alice and Bob went to the park. Bob gave a ball to",
    "This dog is cute. These dogs",
    "The author that the guards like",
    "Many girls insulted themselves",
    "I don't think anybody has ever",
    "supercalifragilisticexpialidocious",
    "Impressionists",
    " Impressionists",
    "!!!???...",
    "x = y + z * (a - b) / c;",
    "def f(x):\n    return x ** 2\n",
    "She said \"hello\" and left.",
    "'quoted' and 's",
    "it's its it 's",
    "1st 2nd 3rd 4th",
    "½ ⅓ ² ①",
    "Geäöüß",
    "word​joiner",
    "multiple     spaces     inside",
    "end with newline\n",
    "\r\nwindows line\r\n",
    "UPPER lower MiXeD",
    "hyphen-ated and under_scored",
    "$100 and 50% off",
]


def dump_tokenizer():
    tok_dir = FIX / "gpt2_tokenizer"
    tok = GPT2Tokenizer(str(tok_dir / "vocab.json"), str(tok_dir / "merges.txt"))
    cases = [{"text": s, "ids": tok.encode(s)} for s in STRINGS]
    (FIX / "tokenizer_oracle.json").write_text(json.dumps({"cases": cases}, ensure_ascii=True, indent=1))


def main():
    dump_model(True, 1234, FIX / "hf_tiny_tied")
    dump_model(False, 4321, FIX / "hf_tiny_untied")
    dump_tokenizer()


if __name__ == "__main__":
    main()
