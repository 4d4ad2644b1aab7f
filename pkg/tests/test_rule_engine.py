"""Fact derivation, path search, and the collusion filter rules."""

import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collusionscan.app_model import (
    ActionTrace,
    AppDescriptor,
    Channel,
    ChannelKind,
    ThreatKind,
    ThreatSpec,
    check_collusion_definition,
    make_poset,
)
from collusionscan.errors import ConfigError
from collusionscan.rule_engine import (
    Communicate,
    HighLevelAction,
    Receive,
    Send,
    communication_paths,
    default_permission_map,
    derive_actions,
    derive_channels,
    derive_communications,
    detect,
    load_permission_map,
    matrix_from_csv,
    matrix_from_json,
    matrix_to_csv,
    matrix_to_json,
    permission_map_to_json,
)

INTENT = ChannelKind.Intent
PREFS = ChannelKind.SharedPreferences
STORAGE = ChannelKind.ExternalStorage


def app(app_id, perms=(), sends=(), receives=()):
    return AppDescriptor(
        id=app_id,
        package=f"com.test.{app_id}",
        permissions=frozenset(perms),
        sends=tuple(sends),
        receives=tuple(receives),
    )


class TestDeriveActions:
    def test_internet_maps_to_information_outside(self):
        a = app("a", perms=["INTERNET"])
        assert derive_actions(a, default_permission_map()) == {
            ("a", HighLevelAction.InformationOutside)
        }

    def test_empty_permissions(self):
        assert derive_actions(app("a"), default_permission_map()) == set()

    def test_union_over_map_entries(self):
        a = app("a", perms=["READ_CONTACTS", "SEND_SMS"])
        actions = derive_actions(a, default_permission_map())
        assert ("a", HighLevelAction.SensitiveInformation) in actions
        assert ("a", HighLevelAction.MoneyApi) in actions

    def test_unmapped_permission_yields_nothing(self):
        a = app("a", perms=["VIBRATE"])
        assert derive_actions(a, default_permission_map()) == set()


class TestDeriveChannels:
    def test_declared_broadcast_send(self):
        ch = Channel(INTENT, "SEND_FILE")
        facts = derive_channels(app("a", sends=[ch]))
        assert facts == {Send("a", ch)}

    def test_write_storage_implies_wildcard_send(self):
        facts = derive_channels(app("a", perms=["WRITE_EXTERNAL_STORAGE"]))
        assert facts == {Send("a", Channel(STORAGE, "*"))}

    def test_read_storage_implies_wildcard_receive(self):
        facts = derive_channels(app("a", perms=["READ_EXTERNAL_STORAGE"]))
        assert facts == {Receive("a", Channel(STORAGE, "*"))}

    def test_no_channels(self):
        assert derive_channels(app("a")) == set()


class TestDeriveCommunications:
    def test_shared_prefs_match(self):
        ch = Channel(PREFS, "p:com.x")
        facts = {Send("1", ch), Receive("2", ch)}
        assert derive_communications(facts) == {Communicate("1", "2", ch)}

    def test_intent_action_mismatch(self):
        facts = {Send("1", Channel(INTENT, "A")), Receive("2", Channel(INTENT, "B"))}
        assert derive_communications(facts) == set()

    def test_wildcard_storage_match(self):
        facts = {
            Send("8", Channel(STORAGE, "*")),
            Receive("9", Channel(STORAGE, "docs/")),
        }
        comms = derive_communications(facts)
        assert {(c.src, c.dst) for c in comms} == {("8", "9")}
        # Evidence prefers the concrete endpoint.
        assert next(iter(comms)).channel == Channel(STORAGE, "docs/")

    def test_no_self_communication(self):
        ch = Channel(INTENT, "X")
        facts = {Send("1", ch), Receive("1", ch)}
        assert derive_communications(facts) == set()

    def test_directional(self):
        ch = Channel(INTENT, "X")
        facts = {Send("1", ch), Receive("2", ch)}
        comms = derive_communications(facts)
        assert Communicate("1", "2", ch) in comms
        assert all(not (c.src == "2" and c.dst == "1") for c in comms)


def oracle_paths(edges, max_len):
    """Exhaustive simple-path oracle over explicit edges."""
    nodes = {n for e in edges for n in e}
    found = set()
    for length in range(2, max_len + 1):
        for combo in itertools.permutations(sorted(nodes), length):
            if all((a, b) in edges for a, b in zip(combo, combo[1:])):
                found.add((combo[0], combo[-1], combo))
    return found


class TestCommunicationPaths:
    def comms(self, edges):
        return {Communicate(a, b, Channel(INTENT, f"{a}-{b}")) for a, b in edges}

    def test_chain_includes_transitive_path(self):
        paths = communication_paths(self.comms({("7", "8"), ("8", "9")}), max_len=4)
        assert ("7", "9", ("7", "8", "9")) in paths
        assert ("7", "8", ("7", "8")) in paths

    def test_no_edges(self):
        assert communication_paths(set(), max_len=4) == set()

    def test_three_cycle_against_oracle(self):
        edges = {("a", "b"), ("b", "a"), ("b", "c"), ("c", "b"), ("a", "c"), ("c", "a")}
        paths = communication_paths(self.comms(edges), max_len=3)
        assert paths == oracle_paths(edges, 3)
        assert len([p for p in paths if len(p[2]) == 2]) == 6
        assert len([p for p in paths if len(p[2]) == 3]) == 6
        assert all(len(set(p[2])) == len(p[2]) for p in paths)

    def test_max_len_bounds_path_size(self):
        edges = {("a", "b"), ("b", "c"), ("c", "d")}
        paths = communication_paths(self.comms(edges), max_len=3)
        assert all(len(p[2]) <= 3 for p in paths)
        assert ("a", "d", ("a", "b", "c", "d")) not in paths

    def test_max_len_validation(self):
        with pytest.raises(ValueError):
            communication_paths(set(), max_len=1)

    @given(
        st.sets(
            st.tuples(st.sampled_from("abcd"), st.sampled_from("abcd")).filter(
                lambda e: e[0] != e[1]
            ),
            max_size=8,
        ),
        st.integers(min_value=2, max_value=4),
    )
    @settings(max_examples=50)
    def test_against_oracle(self, edges, max_len):
        assert communication_paths(self.comms(edges), max_len) == oracle_paths(
            edges, max_len
        )


class TestDetect:
    def test_corpus_pair_1_2_information_theft(self):
        from collusionscan.corpus import load_app

        matrix = detect([load_app("1"), load_app("2")])
        assert ThreatKind.InformationTheft in matrix.threats("1", "2")
        assert not matrix.threats("2", "1")

    def test_corpus_pair_3_4_money_theft(self):
        from collusionscan.corpus import load_app

        matrix = detect([load_app("3"), load_app("4")])
        assert ThreatKind.MoneyTheft in matrix.threats("3", "4")

    def test_corpus_contact_extractor_chain(self):
        from collusionscan.corpus import load_app

        apps = [load_app("7"), load_app("8"), load_app("9")]
        matrix = detect(apps, max_len=3)
        for pair in (("7", "8"), ("7", "9"), ("8", "9")):
            assert ThreatKind.InformationTheft in matrix.threats(*pair), pair

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValueError):
            detect([app("x", perms=["INTERNET"]), app("x")])

    def test_cells_never_exceed_directed_pairs(self):
        from collusionscan.corpus import load_corpus

        apps = load_corpus()
        matrix = detect(apps)
        n = len(apps)
        assert len(matrix.cells) <= n * (n - 1)
        assert all(src != dst for src, dst in matrix.cells)

    def test_no_finding_without_connecting_communication(self):
        # Every cell is backed by a channel between the two apps: a directed
        # path src -> dst, or for inferred return flows the commanding
        # direction dst -> src.
        from collusionscan.corpus import load_corpus

        apps = load_corpus()
        matrix = detect(apps)
        facts = set()
        for a in apps:
            facts |= derive_channels(a)
        edges = {(c.src, c.dst) for c in derive_communications(facts)}
        reach = {(s, d, p[0:1]) for s, d, p in communication_paths(
            derive_communications(facts), max_len=len(apps)
        )}
        connected = {(s, d) for s, d, _ in reach}
        for src, dst in matrix.cells:
            assert (src, dst) in connected or (dst, src) in connected

    def test_two_node_findings_confirmed_by_definition_oracle(self):
        # For adjacent findings, a synthetic trace built from the finding's
        # evidence satisfies the collusion definition with an unordered
        # threat poset.
        from collusionscan.corpus import load_corpus

        apps = load_corpus()
        matrix = detect(apps)
        facts = set()
        for a in apps:
            facts |= derive_channels(a)
        comms = derive_communications(facts)

        for (src, dst), findings in matrix.cells.items():
            for finding in findings:
                if len(finding.path) != 2:
                    continue
                if finding.rule == "backflow":
                    channel_pairs = [(c.src, c.dst) for c in comms
                                     if (c.src, c.dst) == (dst, src)]
                else:
                    channel_pairs = [(c.src, c.dst) for c in comms
                                     if (c.src, c.dst) == (src, dst)]
                assert channel_pairs, (src, dst, finding.rule)
                sender, receiver = channel_pairs[0]
                trace = ActionTrace(
                    events=(
                        (src, "act_src"),
                        (sender, "chan_send"),
                        (receiver, "chan_recv"),
                        (dst, "act_dst"),
                    )
                )
                threat = ThreatSpec(
                    finding.threat, make_poset(["act_src", "act_dst"])
                )
                comm = make_poset(["chan_send", "chan_recv"],
                                  [("chan_send", "chan_recv")])
                result = check_collusion_definition(
                    trace, {src, dst}, [threat], [comm]
                )
                assert result is not None and result.threat is finding.threat

    @given(st.data())
    @settings(max_examples=30, deadline=None)
    def test_adding_permission_is_monotone(self, data):
        from collusionscan.corpus import load_corpus

        apps = load_corpus()
        target = data.draw(st.sampled_from(range(len(apps))))
        new_perm = data.draw(
            st.sampled_from(sorted(default_permission_map().entries))
        )
        before = detect(apps).threat_cells()
        boosted = list(apps)
        boosted[target] = AppDescriptor(
            id=apps[target].id,
            package=apps[target].package,
            permissions=apps[target].permissions | {new_perm},
            sends=apps[target].sends,
            receives=apps[target].receives,
            methods=apps[target].methods,
        )
        after = detect(boosted).threat_cells()
        for cell, threats in before.items():
            assert threats <= after.get(cell, frozenset()), cell


class TestMatrixSerialisation:
    def matrix(self):
        from collusionscan.corpus import load_corpus

        return detect(load_corpus())

    def test_csv_round_trip(self):
        matrix = self.matrix()
        text = matrix_to_csv(matrix)
        assert matrix_from_csv(text) == {
            pair: threats for pair, threats in matrix.threat_cells().items()
        }

    def test_json_round_trip(self):
        matrix = self.matrix()
        doc = matrix_to_json(matrix)
        restored = matrix_from_json(doc)
        assert restored.apps == matrix.apps
        assert restored.cells == matrix.cells

    def test_csv_layout(self):
        text = matrix_to_csv(self.matrix())
        lines = text.strip().splitlines()
        assert lines[0].startswith("id,")
        assert len(lines) == 15  # header + one row per app


class TestPermissionMapConfig:
    def test_round_trip(self):
        pmap = default_permission_map()
        import json

        text = json.dumps(permission_map_to_json(pmap))
        assert load_permission_map(text).entries == pmap.entries

    def test_unknown_action_name(self):
        with pytest.raises(ConfigError):
            load_permission_map('{"X": ["nonsense"]}')

    def test_empty_action_list(self):
        with pytest.raises(ConfigError):
            load_permission_map('{"X": []}')

    def test_invalid_json(self):
        with pytest.raises(ConfigError):
            load_permission_map("{")

    def test_shipped_config_matches_builtin_default(self):
        from importlib import resources

        text = (
            resources.files("collusionscan")
            .joinpath("data", "permission_map.json")
            .read_text("utf-8")
        )
        assert load_permission_map(text).entries == default_permission_map().entries
