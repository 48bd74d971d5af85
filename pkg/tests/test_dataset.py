import pytest

from fundus_sve.dataset import (Manifest, ManifestError, Provenance,
                                SampleRecord, STARE_CLASS_NAMES, init_manifest,
                                load_manifest, save_manifest, stratified_split,
                                summarize_distribution)


def make_manifest(counts):
    records = []
    for label, n in counts.items():
        for i in range(n):
            records.append(SampleRecord(id=f"c{label}s{i}", image=f"i{label}_{i}.png",
                                        mask="", label=label))
    return Manifest(records=records)


def test_round_trip(tmp_path):
    manifest = make_manifest({0: 3, 5: 2})
    save_manifest(manifest, tmp_path / "m.csv")
    back = load_manifest(tmp_path / "m.csv")
    assert back.records == manifest.records


def test_rejects_label_14(tmp_path):
    (tmp_path / "m.csv").write_text(
        "id,image,mask,label,split,provenance\nx,i.png,,14,train,original\n")
    with pytest.raises(ManifestError):
        load_manifest(tmp_path / "m.csv")


def test_empty_manifest(tmp_path):
    (tmp_path / "m.csv").write_text("id,image,mask,label,split,provenance\n")
    assert load_manifest(tmp_path / "m.csv").records == []


def test_rejects_duplicate_ids():
    with pytest.raises(ManifestError):
        Manifest(records=[
            SampleRecord(id="a", image="1.png", mask="", label=0),
            SampleRecord(id="a", image="2.png", mask="", label=1),
        ])


def test_rejects_bad_header(tmp_path):
    (tmp_path / "m.csv").write_text("id,path,label\n")
    with pytest.raises(ManifestError):
        load_manifest(tmp_path / "m.csv")


def test_check_files(tmp_path):
    save_manifest(make_manifest({0: 1}), tmp_path / "m.csv")
    with pytest.raises(ManifestError):
        load_manifest(tmp_path / "m.csv", check_files=True)


def test_provenance_round_trip():
    p = Provenance(sources=("a", "b"), ops=("rotate(15)", "noise(0,10)"))
    assert Provenance.decode(p.encode()) == p
    assert Provenance.decode("original").original


def test_class_name_map_covers_14_labels():
    assert sorted(STARE_CLASS_NAMES) == list(range(14))
    assert STARE_CLASS_NAMES[1] == "Emboli"
    assert STARE_CLASS_NAMES[7] == "BDR/NPDR"


def test_split_10_samples_exact():
    out = stratified_split(make_manifest({0: 10, 1: 10}), seed=0)
    counts = summarize_distribution(out)
    for label in (0, 1):
        assert counts["train"][label] == 6
        assert counts["val"][label] == 2
        assert counts["test"][label] == 2


def test_split_6_samples_largest_remainder():
    # 3.6/1.2/1.2 rounds to 4/1/1 with the leftover going to train
    out = stratified_split(make_manifest({1: 6, 0: 10}), seed=3)
    counts = summarize_distribution(out)
    assert counts["train"][1] == 4
    assert counts["val"][1] == 1
    assert counts["test"][1] == 1


def test_split_is_partition():
    manifest = make_manifest({0: 13, 1: 7, 2: 4})
    out = stratified_split(manifest, seed=5)
    ids = [r.id for r in out.records]
    assert sorted(ids) == sorted(r.id for r in manifest.records)
    assert all(r.split in ("train", "val", "test") for r in out.records)
    # label preservation
    labels = {r.id: r.label for r in manifest.records}
    assert all(labels[r.id] == r.label for r in out.records)


def test_split_deterministic():
    manifest = make_manifest({0: 20, 1: 9})
    a = stratified_split(manifest, seed=7)
    b = stratified_split(manifest, seed=7)
    assert [r.split for r in a.records] == [r.split for r in b.records]


def test_split_deviation_at_most_one():
    for n in range(3, 40):
        out = stratified_split(make_manifest({0: n}), seed=1)
        counts = summarize_distribution(out)
        for split, ratio in (("train", 0.6), ("val", 0.2), ("test", 0.2)):
            got = counts.get(split, {}).get(0, 0)
            assert abs(got - n * ratio) <= 1


def test_split_bad_ratios():
    with pytest.raises(ValueError):
        stratified_split(make_manifest({0: 4}), ratios=(0.5, 0.2, 0.2))


def test_small_classes_reach_train():
    out = stratified_split(make_manifest({0: 3, 1: 10}), seed=2)
    counts = summarize_distribution(out)
    assert counts["train"][0] >= 1


def test_summarize_requires_split():
    with pytest.raises(ManifestError):
        summarize_distribution(make_manifest({0: 2}))


def test_summarize_counts_total():
    out = stratified_split(make_manifest({0: 11, 3: 6}), seed=0)
    counts = summarize_distribution(out)
    assert sum(sum(v.values()) for v in counts.values()) == 17


def test_init_manifest(tmp_path):
    (tmp_path / "imgs").mkdir()
    for sid in ("a1", "a2"):
        (tmp_path / "imgs" / f"{sid}.png").write_bytes(b"x")
    (tmp_path / "labels.txt").write_text("a1,0\na2,7\n")
    manifest = init_manifest(tmp_path / "imgs", tmp_path / "labels.txt")
    assert [r.id for r in manifest.records] == ["a1", "a2"]
    assert [r.label for r in manifest.records] == [0, 7]
