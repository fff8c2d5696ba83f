import random

import pytest
from hypothesis import given, settings, strategies as st

from sssdet.errors import ConfigError
from sssdet.netdef import account, parse_config, reference_config, reference_config_text, summarize

ONE_CONV = """
[net]
width=8
height=8
channels=3

[convolutional]
filters=16
size=3
batch_normalize=1
activation=leaky
"""


def tiny(filters=18, classes=4, anchors="1,1, 2,2", pool=True, width=8):
    return f"""
[net]
width={width}
height={width}
[convolutional]
batch_normalize=1
filters=8
size=3
{"[maxpool]" if pool else ""}
[convolutional]
filters={filters}
size=1
activation=linear
[region]
anchors={anchors}
classes={classes}
"""


def hand_costs(defn):
    """Independent per-layer parameter/FLOP formula used only here."""
    params = flops = 0
    c, h, w = defn.net.channels, defn.net.height, defn.net.width
    for layer in defn.layers:
        if layer.kind == "maxpool":
            h, w = h // 2, w // 2
        elif layer.kind == "conv":
            k, cout = layer.size, layer.filters
            params += k * k * c * cout + (4 * cout if layer.batch_normalize else 0)
            flops += 2 * k * k * c * cout * h * w
            c = cout
    return params, flops


def test_reference_shape_chain():
    d = reference_config()
    assert d.input_shape == (3, 608, 608)
    assert d.output_shape == (36, 76, 76)
    assert d.grid_size ** 2 == 5776
    pools = [d.shapes[i][1] for i, l in enumerate(d.layers) if l.kind == "maxpool"]
    assert pools == [304, 152, 76]
    kinds = [l.kind for l in d.layers]
    assert kinds.count("conv") == 10 and kinds.count("maxpool") == 3 and kinds[-1] == "region"


def test_reference_budgets():
    rep = account(reference_config())
    assert 1.80e6 <= rep.params <= 2.05e6
    assert 29 <= rep.bflops <= 35
    assert 7.0e6 <= rep.model_bytes <= 8.5e6
    assert (rep.params, rep.flops) == hand_costs(reference_config())
    # frozen reconstruction totals
    assert rep.params == 1_985_248
    assert rep.flops == 32_080_920_576


def test_head_has_no_batchnorm_and_linear_activation():
    head = reference_config().convs[-1]
    assert not head.batch_normalize and head.activation == "linear"
    assert all(c.batch_normalize and c.activation == "leaky" for c in reference_config().convs[:-1])


def test_one_conv_config():
    # a body without a region layer is rejected; add one for the shape check
    with pytest.raises(ConfigError, match="region"):
        parse_config(ONE_CONV)
    text = ONE_CONV.replace("filters=16", "filters=16") + """
[convolutional]
filters=18
size=1
activation=linear
[region]
anchors=1,1,2,2
classes=4
"""
    d = parse_config(text)
    assert d.shapes[0] == (16, 8, 8)
    rep = account(d)
    assert rep.layers[0].params == 432 + 64 == 496


def test_flop_arithmetic_example():
    text = reference_config_text()
    rep = account(parse_config(text))
    assert rep.layers[0].flops == 2 * 9 * 3 * 32 * 608 * 608
    one = parse_config(ONE_CONV.replace("width=8", "width=608").replace("height=8", "height=608") + """
[convolutional]
filters=18
size=1
activation=linear
[region]
anchors=1,1,2,2
classes=4
""")
    assert account(one).layers[0].flops == 2 * 9 * 3 * 16 * 608 * 608 == 319_389_696


def test_filter_mismatch_rejected():
    with pytest.raises(ConfigError, match=r"num_anchors\*\(5\+classes\)"):
        parse_config(tiny(filters=20))


@pytest.mark.parametrize("text,fragment", [
    ("[net]\nwidth=8\nheight=8\n[bogus]\n", "unknown section"),
    ("[net]\nwidth=8\nheight=8\ncolour=2\n", "unknown key"),
    ("[net]\nwidth=eight\nheight=8\n", "non-numeric"),
    ("[net]\nwidth=8\nheight=8\n", "no layers"),
])
def test_errors_carry_line_numbers(text, fragment):
    with pytest.raises(ConfigError, match=fragment) as exc:
        parse_config(text)
    assert exc.value.line is not None and "line" in str(exc.value)


def test_odd_size_maxpool_rejected():
    with pytest.raises(ConfigError, match="even"):
        parse_config(tiny(width=6).replace("[maxpool]", "[maxpool]\n[maxpool]"))


def test_region_must_be_last():
    text = tiny() + "\n[convolutional]\nfilters=4\nsize=1\n"
    with pytest.raises(ConfigError, match="last"):
        parse_config(text)


def test_summarize_rows_and_totals():
    d = reference_config()
    text = summarize(d)
    body = [l for l in text.splitlines()[2:-1]]
    assert len(body) == 14
    csv = summarize(d, csv=True).splitlines()
    rows = [r.split(",") for r in csv[1:-1]]
    total = csv[-1].split(",")
    assert sum(int(r[6]) for r in rows) == int(total[6])
    assert sum(int(r[7]) for r in rows) == int(total[7])
    assert summarize(d) == summarize(reference_config())


def _shuffle_keys(text, seed):
    """Reorder keys inside each section and sprinkle comments."""
    rnd = random.Random(seed)
    out, block = [], []
    for line in text.splitlines() + ["[end]"]:
        if line.startswith("["):
            rnd.shuffle(block)
            out.extend(block)
            block = []
            if line != "[end]":
                out.append(f"# section\n{line}")
        elif line.strip() and not line.startswith("#"):
            block.append(line + ("  # note" if rnd.random() < 0.3 else ""))
    return "\n".join(out)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_account_invariant_under_reordering(seed):
    base = account(reference_config())
    shuffled = account(parse_config(_shuffle_keys(reference_config_text(), seed)))
    assert (shuffled.params, shuffled.flops, shuffled.model_bytes) == (base.params, base.flops, base.model_bytes)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["conv", "pool"]), st.sampled_from([1, 3]),
                          st.integers(1, 64), st.booleans()), min_size=0, max_size=6),
       st.integers(1, 6), st.integers(1, 4))
def test_account_matches_hand_formula(body, classes, anchors):
    lines = ["[net]", "width=64", "height=64"]
    size = 64
    for kind, k, filters, bn in body:
        if kind == "pool":
            if size % 2:
                continue
            lines.append("[maxpool]")
            size //= 2
        else:
            lines += ["[convolutional]", f"filters={filters}", f"size={k}", f"batch_normalize={int(bn)}"]
    depth = anchors * (5 + classes)
    anchor_str = ",".join(["1,1"] * anchors)
    lines += ["[convolutional]", f"filters={depth}", "size=3", "activation=linear",
              "[region]", f"anchors={anchor_str}", f"classes={classes}"]
    d = parse_config("\n".join(lines))
    rep = account(d)
    assert (rep.params, rep.flops) == hand_costs(d)
    assert rep.model_bytes == 20 + 4 * rep.params
