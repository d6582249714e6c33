import pytest

from kgdexport.wndb import WordNetDb, WordNetError


class TestParsing:
    def test_first_sense_selection(self, wordnet_dir):
        db = WordNetDb(wordnet_dir)
        # "car" has two senses in the fixture; the motor-vehicle sense is
        # listed first and must win
        syn = db.first_noun_synset("car")
        assert syn.definition.startswith("a motor vehicle with four wheels")

    def test_hyponyms_in_pointer_order(self, wordnet_dir):
        db = WordNetDb(wordnet_dir)
        hyps = db.hyponyms(db.first_noun_synset("car"))
        names = [h.lemma for h in hyps]
        assert names == ["cab", "coupe", "convertible", "sports car"]

    def test_definition_strips_usage_examples(self, wordnet_dir):
        db = WordNetDb(wordnet_dir)
        offsets = db._index["car"]
        elevator_sense = db.synset(offsets[1])
        assert elevator_sense.definition == "where passengers ride up and down"
        assert '"' not in elevator_sense.definition

    def test_multiword_lemma_lookup(self, wordnet_dir):
        db = WordNetDb(wordnet_dir)
        syn = db.first_noun_synset("mountain bike")
        assert syn is not None
        assert "sturdy frame" in syn.definition

    def test_unknown_lemma_returns_none(self, wordnet_dir):
        db = WordNetDb(wordnet_dir)
        assert db.first_noun_synset("gradient descent") is None

    def test_header_lines_skipped(self, wordnet_dir):
        # the fixture carries standard whitespace-prefixed header lines
        text = (wordnet_dir / "data.noun").read_text()
        assert text.startswith("  ")
        WordNetDb(wordnet_dir)  # must not choke on them

    def test_missing_directory(self, tmp_path):
        with pytest.raises(WordNetError):
            WordNetDb(tmp_path)

    def test_discover_env(self, wordnet_dir, monkeypatch):
        monkeypatch.setenv("WNSEARCHDIR", str(wordnet_dir))
        db = WordNetDb.discover()
        assert db.first_noun_synset("dog") is not None

    def test_discover_without_hint(self, monkeypatch):
        monkeypatch.delenv("WNSEARCHDIR", raising=False)
        with pytest.raises(WordNetError):
            WordNetDb.discover()
