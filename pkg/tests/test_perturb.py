"""Source perturbations: registry invariants, exact rewrites, determinism."""

import hashlib
import json

import pytest

from crust import perturb
from crust.errors import ConfigError
from crust.llm import BackendConfig, ScriptedBackend
from crust.perturb import (
    apply,
    declared_identifiers,
    default_seed,
    experiment_kind,
    registry,
    sample_sets,
    write_perturbed_corpus,
)

from helpers import mk_unit


def _mock(entries):
    return ScriptedBackend(
        BackendConfig(name="mock", kind="scripted-mock", model="m"), entries
    )


# ---------------------------------------------------------------------------
# registry

def test_registry_shape():
    specs = registry()
    assert len(specs) == 20
    assert next(iter(specs)) == "identity"
    assert {s.level for s in specs.values()} == {1, 2, 3, 4, 5, 6}
    assert all(s.mode in ("deterministic", "stochastic") for s in specs.values())
    assert len({s.perturbation_id for s in specs.values()}) == 20


def test_registry_level_groups():
    by_level = {}
    for s in registry().values():
        by_level.setdefault(s.level, []).append(s.perturbation_id)
    assert "identity" in by_level[1]
    assert "signature_reorder" in by_level[4]
    assert "de_morgan" in by_level[6]


def test_experiment_kind():
    specs = registry()
    assert experiment_kind(specs["identity"]) == "identity"
    assert experiment_kind(specs["de_morgan"]) == "deterministic"
    assert experiment_kind(specs["identifier_typos"]) == "stochastic"


def test_default_seed_is_stable():
    h = hashlib.sha256(b"a.c\x00de_morgan\x003").digest()
    assert default_seed("a.c", "de_morgan", 3) == int.from_bytes(h[:8], "big")


# ---------------------------------------------------------------------------
# apply() contract

def test_identity_is_noop():
    out = apply("identity", "int f(void) { return 1; }")
    assert out.identity and out.text == "int f(void) { return 1; }"


def test_unknown_perturbation():
    with pytest.raises(ConfigError):
        apply("rot13", "int x;")


def test_stochastic_requires_seed():
    with pytest.raises(ConfigError):
        apply("identifier_typos", "int f(int x) { return x; }")


def test_model_assisted_requires_model():
    with pytest.raises(ConfigError):
        apply("comment_roundtrip", "/* hi */ int x;")


def test_apply_accepts_unit_and_str():
    text = "int f(int x) { return x; }"
    unit = mk_unit("u.c", text)
    assert apply("comment_removal", unit).source_id == "u.c"
    assert apply("comment_removal", text).source_id == "<text>"


def test_stochastic_deterministic_given_seed():
    text = "int counter_add(int base_value, int step_size) { return base_value + step_size; }"
    a = apply("identifier_typos", text, seed=99)
    b = apply("identifier_typos", text, seed=99)
    c = apply("identifier_typos", text, seed=100)
    assert a.text == b.text
    assert a.text != text
    assert c.text != a.text or c.text != text  # different seed, independent draw


# ---------------------------------------------------------------------------
# exact rewrites (deterministic transforms)

def _one(pid, text, **kw):
    return apply(pid, text, **kw).text


def test_de_morgan_over_and():
    assert _one("de_morgan", "int f(int a, int b) { if (!(a && b)) { return 1; } return 0; }") == \
        "int f(int a, int b) { if (!a || !b) { return 1; } return 0; }"


def test_de_morgan_over_or_keeps_operand_groups():
    assert _one("de_morgan", "int f(int a, int b) { if (!(a > 0 || b < 2)) { return 1; } return 0; }") == \
        "int f(int a, int b) { if (!(a > 0) && !(b < 2)) { return 1; } return 0; }"


def test_de_morgan_outside_if_keeps_parens():
    assert _one("de_morgan", "int f(int a, int b) { int x = !(a && b); return x; }") == \
        "int f(int a, int b) { int x = (!a || !b); return x; }"


def test_condition_duplication():
    assert _one("condition_duplication", "int f(int x) { if (x > 0) { return 1; } return 0; }") == \
        "int f(int x) { if ((x > 0) && (x > 0)) { return 1; } return 0; }"


def test_condition_duplication_skips_impure():
    text = "int g(int x);\nint f(int x) { if (g(x)) { return 1; } return 0; }"
    assert apply("condition_duplication", text).identity


def test_condition_swap_braced():
    assert _one("condition_swap", "int f(int c) { if (c > 2) { return 1; } else { return 2; } }") == \
        "int f(int c) { if (!(c > 2)) { { return 2; } } else { { return 1; } } }"


def test_condition_swap_unbraced():
    assert _one("condition_swap", "int f(int c) { if (c > 2) return 1; else return 2; }") == \
        "int f(int c) { if (!(c > 2)) { return 2; } else { return 1; } }"


def test_condition_swap_needs_else():
    assert apply("condition_swap", "int f(int c) { if (c) { return 1; } return 0; }").identity


def test_for_becomes_while():
    src = "int f(int n) { int t = 0; for (int i = 0; i < n; i++) { t += i; } return t; }"
    assert _one("for_while_swap", src) == \
        "int f(int n) { int t = 0; { int i = 0; while (i < n) { t += i; i++; } } return t; }"


def test_while_becomes_for():
    assert _one("for_while_swap", "int f(int n) { while (n > 3) { n -= 2; } return n; }") == \
        "int f(int n) { for (; n > 3; ) { n -= 2; } return n; }"


def test_for_with_continue_is_left_alone():
    src = "int f(int n) { int t = 0; for (int i = 0; i < n; i++) { if (i == 2) continue; t += i; } return t; }"
    assert apply("for_while_swap", src).identity


def test_naming_convention_flips_both_ways():
    assert _one("naming_convention", "int my_count(int bigValue) { int out_sum = bigValue; return out_sum; }") == \
        "int myCount(int big_value) { int outSum = big_value; return outSum; }"


def test_short_identifiers():
    assert _one("short_identifiers", "int my_count(int big_value) { int out_sum = big_value; return out_sum; }") == \
        "int a(int b) { int c = b; return c; }"


def test_signature_reorder_rewrites_calls():
    src = ("static int add3(int a, int b, int c) { return a + b + c; }\n"
           "int use(int x) { return add3(x, 2, 3); }")
    assert _one("signature_reorder", src) == (
        "static int add3(int c, int b, int a) { return a + b + c; }\n"
        "int use(int x) { return add3(3, 2, x); }"
    )


def test_signature_reorder_skips_main_and_single_param():
    assert apply("signature_reorder", "int f(int x) { return x; }").identity
    assert apply("signature_reorder", "int main(int argc, char **argv) { return 0; }").identity


def test_indent_reformat():
    src = "int f(int x) {\n  if (x) {\n      return 1;\n  }\n  return 0;\n}"
    assert _one("indent_reformat", src) == \
        "int f(int x) {\n    if (x) {\n        return 1;\n    }\n    return 0;\n}"


def test_comment_removal_strips_all_comments():
    out = _one("comment_removal", "/* a */\nint f(void) { return 1; } // tail\n")
    assert "/*" not in out and "//" not in out
    assert "int f(void) { return 1; }" in out


def test_include_decl_insertion():
    out = _one("include_decl_insertion", "#include <math.h>\n\ndouble f(double x) { return sqrt(x); }\n")
    assert "#include <math.h>\nextern double (fabs)(double x);" in out


def test_include_decl_insertion_without_includes_is_noop():
    assert apply("include_decl_insertion", "int f(int x) { return x; }").identity


def test_constant_insertion_with_seed():
    out = apply("constant_insertion", "int f(int x) { return x; }", seed=5)
    assert not out.identity
    assert "static const int dfk_" in out.text


def test_dead_code_insertion_with_seed():
    src = "int f(int x) {\n    int y = x + 1;\n    return y;\n}\n"
    out = apply("dead_code_insertion", src, seed=7)
    assert not out.identity


def test_identifier_typos_consistent():
    text = "int counter_add(int base_value) { return base_value + base_value; }"
    out = apply("identifier_typos", text, seed=11)
    assert not out.identity
    assert "base_value" not in out.text or "counter_add" not in out.text
    # no half-renamed occurrences: result still lexes to balanced code
    assert out.text.count("(") == out.text.count(")")


def test_declared_identifiers_excludes_library_names():
    names = declared_identifiers(
        "#include <ctype.h>\nint f(const char *s) { int n = isdigit((unsigned char)s[0]); return n; }"
    )
    assert "isdigit" not in names
    assert set(names) >= {"f", "s", "n"}


# ---------------------------------------------------------------------------
# model-assisted transforms against a scripted backend

def test_comment_roundtrip_uses_model():
    backend = _mock([
        {"match": "to German", "response": "zaehlt die Eingabe"},
        {"match": "to English", "response": "counts the input"},
    ])
    out = apply("comment_roundtrip", "/* counts things */\nint f(int x) { return x; }\n",
                model=backend)
    assert "/* counts the input */" in out.text


def test_comment_insertion_rejects_code_edits():
    backend = _mock([
        {"response": "```c\nint f(int x) { return x + 1; }\n```"},
    ])
    src = "int f(int x) { return x; }\n"
    out = apply("comment_insertion", src, model=backend)
    assert out.identity
    assert any("rejected" in n for n in out.notes)


def test_comment_insertion_accepts_comment_only_edits():
    backend = _mock([
        {"response": "```c\n/* passthrough */\nint f(int x) { return x; }\n```"},
    ])
    out = apply("comment_insertion", "int f(int x) { return x; }\n", model=backend)
    assert "/* passthrough */" in out.text


def test_identifier_improve_parses_json_map():
    backend = _mock([
        {"response": '{"f": "forward_value", "x": "input_value"}'},
    ])
    out = apply("identifier_improve", "int f(int x) { return x; }", model=backend)
    assert "int forward_value(int input_value) { return input_value; }" == out.text


def test_code_extraction_rejects_dropped_functions():
    backend = _mock([
        {"response": "```c\nint helper(int x) { return x; }\n```"},
    ])
    out = apply("code_extraction", "int f(int x) { return x; }\n", model=backend)
    assert out.identity
    assert any("rejected" in n or "dropped" in n for n in out.notes)


# ---------------------------------------------------------------------------
# sampling and corpus output

def test_sample_sets_contract():
    specs = list(registry().values())
    sets = sample_sets(specs, set_size=5, count=50, seed=3)
    assert len(sets) == 50
    for s in sets:
        assert s[0] == "identity"
        assert len(s) == 5
        assert len(set(s)) == 5
        assert s[1:] == sorted(s[1:])
    assert sets == sample_sets(specs, set_size=5, count=50, seed=3)
    assert sets != sample_sets(specs, set_size=5, count=50, seed=4)


def test_sample_sets_validation():
    specs = list(registry().values())
    with pytest.raises(ConfigError):
        sample_sets([s for s in specs if s.perturbation_id != "identity"], set_size=3)
    with pytest.raises(ConfigError):
        sample_sets(specs, set_size=50)


def test_write_perturbed_corpus(tmp_path):
    units = [
        mk_unit("x.c", "/* one */\nint f(int a) { return a; }\n"),
        mk_unit("sub/y.c", "// two\nint g(int a) { return a + 1; }\n"),
    ]
    out_dir = write_perturbed_corpus(units, "comment_removal", 4, tmp_path, "mini")
    assert out_dir.name == "mini__comment_removal__4"
    assert (out_dir / "x.c").exists() and (out_dir / "sub" / "y.c").exists()
    manifest = json.loads((out_dir / "manifest.json").read_text())
    assert manifest["perturbation_id"] == "comment_removal"
    assert [e["source_id"] for e in manifest["files"]] == ["x.c", "sub/y.c"]
    assert manifest["files"][0]["seed"] == default_seed("x.c", "comment_removal", 4)
    assert "/*" not in (out_dir / "x.c").read_text()
