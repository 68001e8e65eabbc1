#!/usr/bin/env python

####################
# Required Modules #
####################

# Generic/Built-in
import csv
import json
import logging

# Libs
import pytest

# Custom
from rbacchain import contract as engine
from rbacchain import crypto, ledger
from rbacchain.cli import EXIT_DENIED, EXIT_ERROR, EXIT_OK, configure_logging, main

##################
# Configurations #
##################


############
# Fixtures #
############

@pytest.fixture
def keyfiles(tmp_path, actors):
    paths = {}
    for name in ("owner", "user", "other_user"):
        paths[name] = str(tmp_path / f"{name}.json")
        crypto.save_keyfile(paths[name], name, actors[name])
    return paths


@pytest.fixture
def chain_file(tmp_path, populated_chain):
    path = str(tmp_path / "chain.bin")
    ledger.save_chain(populated_chain, path)
    return path


@pytest.fixture
def restored_logging():
    yield
    configure_logging("basic")

###################
# Tests - Keys #
###################

def test_cli_keygen(tmp_path, capsys):
    """
    Tests keyfile generation

    # C1: Exit code 0
    # C2: The printed ActorId is the one stored in the keyfile
    """
    path = str(tmp_path / "bdm.json")
    # C1
    assert main(["keygen", "--name", "bdm_1", "--out", path]) == EXIT_OK
    # C2
    name, key_pair = crypto.load_keyfile(path)
    assert capsys.readouterr().out.strip() == key_pair.actor_id
    assert name == "bdm_1"

##########################
# Tests - Policy & Contract #
##########################

def test_cli_policy_validate(policy_file, tmp_path, capsys):
    """
    Tests policy validation

    # C1: A valid policy prints its dimensions and exits 0
    # C2: A dangling reference exits 2
    # C3: A missing file exits 2
    """
    # C1
    assert main(["policy", "validate", policy_file]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "ok: 2 user_types, 3 roles, 4 rights, 4 attributes"
    # C2
    broken = tmp_path / "broken.json"
    broken.write_text(json.dumps({
        'attributes': ["a"], 'rights': [], 'roles': [{'id': "r1", 'rights': ["g9"]}], 'user_types': []
    }))
    assert main(["policy", "validate", str(broken)]) == EXIT_ERROR
    # C3
    assert main(["policy", "validate", str(tmp_path / "missing.json")]) == EXIT_ERROR


def test_cli_contract_compile_and_inspect(policy_file, keyfiles, factory_contract, tmp_path, capsys):
    """
    Tests contract compilation and inspection

    # C1: Compile prints the content-addressed ID and deployment gas
    # C2: Inspect dumps the same ID and gas
    # C3: Inspecting a file that is not a contract exits 2
    """
    out = str(tmp_path / "policy.sc")
    gas = engine.gas_of_deployment(factory_contract).gas_used
    # C1
    assert main(["contract", "compile", policy_file, "--owner", keyfiles["owner"], "--out", out]) == EXIT_OK
    assert capsys.readouterr().out.strip() == f"{factory_contract.contract_id} gas={gas}"
    # C2
    assert main(["contract", "inspect", out]) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary['contract_id'] == factory_contract.contract_id
    assert summary['deployment_gas'] == gas
    # C3
    assert main(["contract", "inspect", policy_file]) == EXIT_ERROR

####################
# Tests - Chains #
####################

def test_cli_chain_verify(chain_file, capsys):
    """
    Tests chain file verification

    # C1: An untouched chain prints ok and exits 0
    # C2: A corrupted chain names the height and exits 1
    """
    # C1
    assert main(["chain", "verify", chain_file]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "ok"
    # C2
    with open(chain_file, "rb") as chain:
        content = bytearray(chain.read())
    content[-5] ^= 0xFF
    with open(chain_file, "wb") as chain:
        chain.write(bytes(content))
    assert main(["chain", "verify", chain_file]) == EXIT_DENIED
    assert capsys.readouterr().out.startswith("corrupt at height 5")


def test_cli_chain_export(chain_file, tmp_path):
    """
    Tests the JSON chain export

    # C1: One entry per block
    """
    out = str(tmp_path / "chain.json")
    assert main(["chain", "export", chain_file, "--json", "--out", out]) == EXIT_OK
    with open(out, "r", encoding="utf-8") as export_file:
        # C1
        assert len(json.load(export_file)) == 6

##################
# Tests - Data #
##################

def test_cli_data_query(chain_file, keyfiles, capsys):
    """
    Tests querying a chain file as a registered user

    # C1: A permitted query prints masked rows and exits 0
    # C2: A hidden attribute is denied with exit 1
    # C3: An unregistered user is denied with exit 1
    """
    # C1
    assert main(["data", "query", "product_id=P001", "--user", keyfiles["user"], "--chain", chain_file]) == EXIT_OK
    rows = json.loads(capsys.readouterr().out)
    assert rows == [
        {'record_id': "rec-1", 'product_id': "P001", 'status': "ok"},
        {'record_id': "rec-2", 'product_id': "P001", 'status': "rework"}
    ]
    # C2
    assert main(["data", "query", "quantity=3", "--user", keyfiles["user"], "--chain", chain_file]) == EXIT_DENIED
    assert "semantic (5)" in capsys.readouterr().out
    # C3
    assert main(
        ["data", "query", "status=ok", "--user", keyfiles["other_user"], "--chain", chain_file]
    ) == EXIT_DENIED


def test_cli_data_query_is_offline_inspection(capsys):
    """
    Tests that the query command declares itself an offline inspection

    # C1: Its help names it an offline inspection without a Tx_V
    # C2: Its help points to the served path
    """
    with pytest.raises(SystemExit):
        main(["data", "query", "--help"])
    usage = " ".join(capsys.readouterr().out.split())
    # C1
    assert "Offline inspection" in usage
    assert "No Tx_V is mined" in usage
    # C2
    assert "fabric request" in usage


def test_cli_data_ingest(chain_file, keyfiles, tmp_path):
    """
    Tests ingesting a JSON-lines file into a chain file

    # C1: Exit code 0 and the chain grows by one block per record
    # C2: An uncatalogued attribute exits 2 and leaves the chain as it was
    """
    records = tmp_path / "records.jsonl"
    records.write_text(
        '{"record_id": "rec-4", "attributes": {"status": "ok"}}\n'
        '{"record_id": "rec-5", "attributes": {"quantity": 2}}\n'
    )
    # C1
    assert main(["data", "ingest", str(records), "--owner", keyfiles["owner"], "--chain", chain_file]) == EXIT_OK
    assert ledger.load_chain(chain_file).height == 7
    # C2
    records.write_text('{"record_id": "rec-6", "attributes": {"supplier": "ACME"}}\n')
    assert main(["data", "ingest", str(records), "--owner", keyfiles["owner"], "--chain", chain_file]) == EXIT_ERROR
    assert ledger.load_chain(chain_file).height == 7

####################
# Tests - Fabric #
####################

def test_cli_fabric_request(policy_file, factory_records, keyfiles, tmp_path, capsys):
    """
    Tests serving one request from a deployment file

    # C1: A permitted request prints the masked rows and exits 0
    # C2: The provisioned chain is written out and verifies
    # C3: A hidden attribute is denied at validation with exit 1
    """
    records = tmp_path / "records.jsonl"
    records.write_text("".join(
        json.dumps({'record_id': record.record_id, 'attributes': record.attributes}) + "\n"
        for record in factory_records
    ))
    config = tmp_path / "fabric.json"
    config.write_text(json.dumps({
        'bdms': 1,
        'stage_timeout': 2.0,
        'request_timeout': 5.0,
        'logging_variant': "test",
        'policy': policy_file,
        'users': [{'name': "user", 'keyfile': keyfiles["user"], 'user_type': "operator", 'roles': ["line"]}],
        'records': str(records),
        'chain_out': "fabric_chain.bin"
    }))
    arguments = ["fabric", "request", "--config", str(config), "--user", keyfiles["user"]]
    # C1
    assert main(arguments + ["--query", "status=ok"]) == EXIT_OK
    output = capsys.readouterr().out
    assert "converged=True" in output
    rows = json.loads(output[output.index("\n[") + 1:])
    assert [row['record_id'] for row in rows] == ["rec-1", "rec-3"]
    assert all(set(row) == {'record_id', 'product_id', 'status'} for row in rows)
    # C2
    assert ledger.verify_encoded(ledger.read_block_blobs(str(tmp_path / "fabric_chain.bin"))).ok
    # C3
    assert main(arguments + ["--query", "quantity=3"]) == EXIT_DENIED
    assert "denied at validation" in capsys.readouterr().out

###################
# Tests - Bench #
###################

def test_cli_bench_gas(tmp_path, capsys):
    """
    Tests the gas benchmark command

    # C1: The CSV holds a header plus one row per role count
    # C2: --compare adds the baseline and ratio series
    # C3: A malformed sweep exits 2
    """
    out = str(tmp_path / "gas.csv")
    # C1
    assert main(["bench", "gas", "--roles", "1..5", "--out", out]) == EXIT_OK
    with open(out, "r", encoding="utf-8") as csv_file:
        content = list(csv.DictReader(csv_file))
    assert [int(row['parameter']) for row in content] == [1, 2, 3, 4, 5]
    assert float(content[0]['median']) == 82129
    # C2
    capsys.readouterr()
    assert main(["bench", "gas", "--roles", "1..5", "--compare"]) == EXIT_OK
    assert len(capsys.readouterr().out.strip().splitlines()) == 15
    # C3
    assert main(["bench", "gas", "--roles", "5..1"]) == EXIT_ERROR


def test_cli_bench_requests_latency(capsys):
    """
    Tests the link latency option of the request benchmark

    # C1: A uniform latency runs the sweep, one row per count plus the fit
    # C2: A fixed latency is accepted
    # C3: Unknown kinds and inverted bounds exit 2
    """
    # C1
    assert main(["bench", "requests", "--counts", "2,4", "--latency", "uniform:1:3"]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert [line.split(",")[2] for line in lines[:2]] == ["2", "4"]
    assert lines[2].startswith("linear fit R^2")
    # C2
    assert main(["bench", "requests", "--counts", "2", "--latency", "fixed:2"]) == EXIT_OK
    # C3
    for broken in ("jitter:5", "uniform:5:1", "fixed:-1", "uniform:3"):
        assert main(["bench", "requests", "--counts", "2", "--latency", broken]) == EXIT_ERROR

#####################
# Tests - Logging #
#####################

def test_cli_verbose_renders_on_console(chain_file, keyfiles, tmp_path, capsys, restored_logging):
    """
    Tests that --verbose switches the component loggers to the console
    variant

    # C1: The ledger's logger writes onto stderr through a stream handler
    # C2: Events are rendered with the component's logger name
    # C3: Without --verbose nothing is rendered
    """
    records = tmp_path / "records.jsonl"
    records.write_text('{"record_id": "rec-4", "attributes": {"status": "ok"}}\n')
    arguments = ["data", "ingest", str(records), "--owner", keyfiles["owner"], "--chain", chain_file]
    # C1
    assert main(["--verbose"] + arguments) == EXIT_OK
    handlers = logging.getLogger("LIB_ledger").handlers
    assert [type(handler) for handler in handlers] == [logging.StreamHandler]
    # C2
    err = capsys.readouterr().err
    assert "[LIB_ledger]" in err
    assert "records.ingested" in err
    assert "chain.saved" in err
    # C3
    configure_logging("basic")
    records.write_text('{"record_id": "rec-5", "attributes": {"status": "ok"}}\n')
    assert main(arguments) == EXIT_OK
    assert "records.ingested" not in capsys.readouterr().err
