"""Writes tiny random Hugging Face checkpoints plus reference activations.

The C++ tests load these directories through the safetensors loader and
compare against the PyTorch forward pass recorded here. Re-run with

    python3 tools/refgen/make_reference.py tests/data/ref
"""

import json
import sys
from pathlib import Path

import torch
import transformers

VOCAB = 257
PROMPT = [256, 72, 101, 108, 108, 111, 32, 119, 111, 114, 108, 100, 33, 10]
COUNTERFACTUAL = [256, 66, 121, 101, 32, 32, 116, 104, 101, 114, 101, 46, 46, 10]


def randomize(model, seed):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if p.dim() == 1 and ("ln" in name or "norm" in name) and name.endswith("weight"):
                p.copy_(1.0 + 0.2 * torch.randn(p.shape, generator=g))
            elif p.dim() == 1:
                p.copy_(0.1 * torch.randn(p.shape, generator=g))
            else:
                p.copy_(0.35 * torch.randn(p.shape, generator=g))


def build(arch):
    common = dict(vocab_size=VOCAB, attn_implementation="eager")
    if arch == "gpt2":
        cfg = transformers.GPT2Config(n_layer=3, n_head=4, n_embd=32, n_positions=64, n_inner=64,
                                      activation_function="gelu_new", **common)
        model = transformers.GPT2LMHeadModel(cfg)
    elif arch == "neox":
        cfg = transformers.GPTNeoXConfig(num_hidden_layers=3, num_attention_heads=4, hidden_size=32,
                                         intermediate_size=64, max_position_embeddings=64,
                                         rotary_pct=0.5, rotary_emb_base=10000, use_parallel_residual=True,
                                         hidden_act="gelu", tie_word_embeddings=False, **common)
        model = transformers.GPTNeoXForCausalLM(cfg)
    elif arch == "llama":
        cfg = transformers.LlamaConfig(num_hidden_layers=3, num_attention_heads=4, num_key_value_heads=4,
                                       hidden_size=32, intermediate_size=48, max_position_embeddings=64,
                                       rms_norm_eps=1e-6, tie_word_embeddings=False, **common)
        model = transformers.LlamaForCausalLM(cfg)
    else:
        raise ValueError(arch)
    model.eval()
    randomize(model, {"gpt2": 1, "neox": 2, "llama": 3}[arch])
    return model


def attn_out_proj(model, arch, layer):
    if arch == "gpt2":
        return model.transformer.h[layer].attn.c_proj
    if arch == "neox":
        return model.gpt_neox.layers[layer].attention.dense
    return model.model.layers[layer].self_attn.o_proj


def head_patched(model, arch, layer, head, pos, d_head):
    """Splices head `head`'s merged-z slice from COUNTERFACTUAL into PROMPT."""
    proj = attn_out_proj(model, arch, layer)
    saved = {}

    def grab(_, args):
        saved["z"] = args[0].detach().clone()

    h = proj.register_forward_pre_hook(grab)
    with torch.no_grad():
        model(torch.tensor([COUNTERFACTUAL]))
    h.remove()

    def splice(_, args):
        z = args[0].clone()
        sl = slice(head * d_head, (head + 1) * d_head)
        z[0, pos, sl] = saved["z"][0, pos, sl]
        return (z,)

    h = proj.register_forward_pre_hook(splice)
    with torch.no_grad():
        out = model(torch.tensor([PROMPT]))
    h.remove()
    return torch.softmax(out.logits[0, -1].double(), -1).tolist()


def kq_swapped(model, arch, a, b, d_head):
    """Distribution after exchanging the query/key weights (and biases) of heads a and b."""
    import copy

    m = copy.deepcopy(model)
    la, ha = a
    lb, hb = b
    with torch.no_grad():
        if arch == "gpt2":
            d = m.config.n_embd
            wa = m.transformer.h[la].attn.c_attn
            wb = m.transformer.h[lb].attn.c_attn
            for part in (0, 1):
                sa = slice(part * d + ha * d_head, part * d + (ha + 1) * d_head)
                sb = slice(part * d + hb * d_head, part * d + (hb + 1) * d_head)
                ta, tb = wa.weight[:, sa].clone(), wb.weight[:, sb].clone()
                wa.weight[:, sa], wb.weight[:, sb] = tb, ta
                ta, tb = wa.bias[sa].clone(), wb.bias[sb].clone()
                wa.bias[sa], wb.bias[sb] = tb, ta
        elif arch == "neox":
            qa = m.gpt_neox.layers[la].attention.query_key_value
            qb = m.gpt_neox.layers[lb].attention.query_key_value
            for part in (0, 1):
                sa = slice(ha * 3 * d_head + part * d_head, ha * 3 * d_head + (part + 1) * d_head)
                sb = slice(hb * 3 * d_head + part * d_head, hb * 3 * d_head + (part + 1) * d_head)
                ta, tb = qa.weight[sa].clone(), qb.weight[sb].clone()
                qa.weight[sa], qb.weight[sb] = tb, ta
                ta, tb = qa.bias[sa].clone(), qb.bias[sb].clone()
                qa.bias[sa], qb.bias[sb] = tb, ta
        else:
            for proj in ("q_proj", "k_proj"):
                pa = getattr(m.model.layers[la].self_attn, proj)
                pb = getattr(m.model.layers[lb].self_attn, proj)
                sa = slice(ha * d_head, (ha + 1) * d_head)
                sb = slice(hb * d_head, (hb + 1) * d_head)
                ta, tb = pa.weight[sa].clone(), pb.weight[sb].clone()
                pa.weight[sa], pb.weight[sb] = tb, ta
        out = m(torch.tensor([PROMPT]))
    return torch.softmax(out.logits[0, -1].double(), -1).tolist()


def main(root):
    for arch in ("gpt2", "neox", "llama"):
        model = build(arch)
        out_dir = Path(root) / arch
        out_dir.mkdir(parents=True, exist_ok=True)
        model.save_pretrained(out_dir, safe_serialization=True)
        for extra in ("generation_config.json",):
            (out_dir / extra).unlink(missing_ok=True)
        with torch.no_grad():
            out = model(torch.tensor([PROMPT]), output_attentions=True, output_hidden_states=True)
        n_layers = len(out.attentions)
        d_head = 8
        ref = {
            "prompt": PROMPT,
            "counterfactual": COUNTERFACTUAL,
            "probabilities": torch.softmax(out.logits[0, -1].double(), -1).tolist(),
            "attention": [a[0].tolist() for a in out.attentions],
            "resid_post": [out.hidden_states[l + 1][0].tolist() for l in range(n_layers - 1)],
            "patch": {"layer": 1, "head": 2, "position": 9},
            "patched_probabilities": head_patched(model, arch, 1, 2, 9, d_head),
            "swap": {"a": [0, 1], "b": [2, 3]},
            "kq_swapped_probabilities": kq_swapped(model, arch, (0, 1), (2, 3), d_head),
            "transformers_version": transformers.__version__,
        }
        (out_dir / "reference.json").write_text(json.dumps(ref))
        print(arch, "ok")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/data/ref")
