#!/usr/bin/env python

####################
# Required Modules #
####################

# Generic/Built-in
import argparse
import asyncio
import json
import os
import sys
from dataclasses import replace
from typing import Dict, List, Optional

# Libs
import rlp
from rlp.exceptions import RLPException

# Custom
from . import bench, crypto, datastore, ledger, rbac
from . import contract as engine
from .config import BENCH_REPETITIONS, BENCH_SEED, PROPOSED_SCHEDULE
from .errors import RbacChainError
from .fabric import Fabric, FabricConfig, LatencyModel, StageDenial
from .general import ComponentLogger, SysmetricLogger
from .rbac import AccessRequest, check_accessibility_rules, load_policy, validate_policy_file

##################
# Configurations #
##################

EXIT_OK = 0
EXIT_DENIED = 1
EXIT_ERROR = 2

# Library modules logging through a module-level component logger
COMPONENT_MODULES = {
    'crypto': crypto,
    'rbac': rbac,
    'contract': engine,
    'datastore': datastore,
    'ledger': ledger
}

###########
# Helpers #
###########

def configure_logging(logging_variant: str) -> None:
    """ Re-initialises every component logger, plus the benchmark harness'
        sysmetric logger, under the given variant
    """
    for name, module in COMPONENT_MODULES.items():
        module._logger = ComponentLogger(logger_name=name, logging_variant=logging_variant).initialise()
    bench._logger = SysmetricLogger(logger_name="bench", logging_variant=logging_variant).initialise()


def _print_json(content) -> None:
    print(json.dumps(content, indent=2, sort_keys=True))


def _schedules(args) -> Dict[str, engine.GasSchedule]:
    return engine.load_gas_schedules(getattr(args, "gas_config", None))


def _schedule(args) -> engine.GasSchedule:
    return _schedules(args)[PROPOSED_SCHEDULE]


def _emit(rows: List[bench.BenchRow], args) -> None:
    if args.out:
        bench.emit_csv(rows, args.out)
    for row in rows:
        print(f"{row.experiment},{row.series},{row.parameter},{row.median:.3f},{row.min:.3f},{row.max:.3f},{row.units}")

############
# Commands #
############

def cmd_keygen(args) -> int:
    key_pair = crypto.key_gen()
    crypto.save_keyfile(args.out, args.name, key_pair)
    print(key_pair.actor_id)
    return EXIT_OK


def cmd_policy_validate(args) -> int:
    dimensions = validate_policy_file(args.policy)
    print("ok: " + ", ".join(f"{count} {name}" for name, count in dimensions.items()))
    return EXIT_OK


def cmd_contract_compile(args) -> int:
    _, owner = crypto.load_keyfile(args.owner)
    contract = engine.compile_contract(load_policy(args.policy), owner.actor_id, args.version)
    with open(args.out, "wb") as contract_file:
        contract_file.write(rlp.encode(contract))
    gas = engine.gas_of_deployment(contract, _schedule(args))
    print(f"{contract.contract_id} gas={gas.gas_used}")
    return EXIT_OK


def cmd_contract_inspect(args) -> int:
    with open(args.contract, "rb") as contract_file:
        contract = rlp.decode(contract_file.read(), engine.SmartContract)
    summary = engine.describe(contract)
    summary['deployment_gas'] = engine.gas_of_deployment(contract, _schedule(args)).gas_used
    _print_json(summary)
    return EXIT_OK


def cmd_chain_verify(args) -> int:
    check = ledger.verify_encoded(ledger.read_block_blobs(args.chain), _schedule(args))
    if check:
        print("ok")
        return EXIT_OK
    print(f"corrupt at height {check.height}: {check.detail}")
    return EXIT_DENIED


def cmd_chain_export(args) -> int:
    dump = ledger.export_json(ledger.load_chain(args.chain, _schedule(args)))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as export_file:
            json.dump(dump, export_file, indent=2, sort_keys=True)
    else:
        _print_json(dump)
    return EXIT_OK


def cmd_data_ingest(args) -> int:
    _, owner = crypto.load_keyfile(args.owner)
    chain = ledger.load_chain(args.chain, _schedule(args))
    heights = ledger.ingest_records(chain, datastore.load_records(args.records), owner)
    ledger.save_chain(chain, args.chain)
    print(f"ingested {len(heights)} records, tip height {chain.height}")
    return EXIT_OK


def cmd_data_query(args) -> int:
    """ Offline inspection of a local chain file: the accessibility rules
        and the masking run directly against the file's state. No Tx_V is
        mined and the rows are unsigned; served requests go through
        `fabric request`.
    """
    _, user_key = crypto.load_keyfile(args.user)
    chain = ledger.load_chain(args.chain, _schedule(args))
    model = chain.state.model()
    if model is None:
        raise RbacChainError("No contract deployed on this chain")

    request = AccessRequest.parse(user_key.actor_id, args.query)
    decision = check_accessibility_rules(model, chain.state.users.get(user_key.actor_id), request)
    if not decision.granted:
        print(f"denied at semantic ({decision.semantic}): {decision.reason}")
        return EXIT_DENIED
    result = datastore.run_query(chain.state.records, model.catalog, request.params, decision)
    _print_json(result.rows())
    return EXIT_OK


async def _fabric_session(
    config_path: str,
    schedule,
    user_keyfile: Optional[str] = None,
    query: str = "",
    logging_variant: Optional[str] = None
):
    """ Brings a fabric up from a deployment file, provisions it and
        optionally serves one request. A given `logging_variant` overrides
        the one of the deployment file for every node.
    """
    with open(config_path, "r", encoding="utf-8") as config_file:
        entry = json.load(config_file)
    base = os.path.dirname(os.path.abspath(config_path))

    def resolve(path: str) -> str:
        return path if os.path.isabs(path) else os.path.join(base, path)

    for node in entry.get('nodes', []):
        if node.get('keyfile'):
            node['keyfile'] = resolve(node['keyfile'])

    config = FabricConfig.from_dict(entry, schedule)
    if logging_variant:
        config = replace(config, logging_variant=logging_variant)
    fabric = Fabric(config)
    await fabric.start()
    try:
        if entry.get('policy'):
            contract_id = await fabric.deploy_policy(load_policy(resolve(entry['policy'])))
            print(f"deployed contract {contract_id}")

        for user in entry.get('users', []):
            keyfile = resolve(user['keyfile'])
            if os.path.exists(keyfile):
                _, key_pair = crypto.load_keyfile(keyfile)
            else:
                key_pair = crypto.key_gen()
                crypto.save_keyfile(keyfile, user.get('name', ""), key_pair)
            await fabric.register_user(user['user_type'], user.get('roles', []), key_pair)
            print(f"registered {key_pair.actor_id} as {user['user_type']}")

        if entry.get('records'):
            heights = await fabric.ingest(datastore.load_records(resolve(entry['records'])))
            print(f"ingested {len(heights)} records")

        response = None
        if user_keyfile:
            _, user_key = crypto.load_keyfile(user_keyfile)
            request = AccessRequest.parse(user_key.actor_id, query)
            response = await fabric.request(user_key, request.params)

        if entry.get('chain_out'):
            ledger.save_chain(fabric.bam.chain, resolve(entry['chain_out']))
        await fabric.settle()
        tips = {chain.tip_hash.hex() for chain in fabric.chains()}
        print(f"{len(fabric.nodes)} nodes at height {fabric.bam.chain.height}, converged={len(tips) == 1}")
        return response
    finally:
        await fabric.stop()


def cmd_fabric_up(args) -> int:
    asyncio.run(_fabric_session(args.config, _schedule(args), logging_variant=args.logging_variant))
    return EXIT_OK


def cmd_fabric_request(args) -> int:
    response = asyncio.run(
        _fabric_session(args.config, _schedule(args), args.user, args.query, args.logging_variant)
    )
    if isinstance(response, StageDenial):
        print(f"denied at {response.stage}: {response.reason}")
        return EXIT_DENIED
    _print_json(response.rows())
    return EXIT_OK


def cmd_bench_gas(args) -> int:
    spec = bench.BenchSpec(
        experiment="gas_roles",
        sweep=bench.parse_sweep(args.roles),
        repetitions=args.repetitions,
        seed=args.seed,
        options={'baseline': args.baseline, 'compare': args.compare}
    )
    _emit(bench.run(spec, _schedules(args)), args)
    return EXIT_OK


def cmd_bench_requests(args) -> int:
    spec = bench.BenchSpec(
        "concurrent_requests",
        bench.parse_sweep(args.counts),
        args.repetitions,
        args.seed,
        options={
            'latency': LatencyModel.parse(args.latency, seed=args.seed),
            'logging_variant': args.logging_variant or "basic"
        }
    )
    rows = bench.run(spec, _schedules(args))
    _emit(rows, args)
    if len(rows) > 1:
        _, _, r2 = bench.linear_fit([r.parameter for r in rows], [r.median for r in rows])
        print(f"linear fit R^2 = {r2:.4f}")
    return EXIT_OK


def cmd_bench_rights(args) -> int:
    spec = bench.BenchSpec(
        "deploy_verify_rights",
        list(range(1, args.max + 1)),
        args.repetitions,
        args.seed
    )
    _emit(bench.run(spec, _schedules(args)), args)
    return EXIT_OK


def cmd_bench_chain(args) -> int:
    spec = bench.BenchSpec(
        "chain_generation",
        bench.parse_sweep(args.records),
        args.repetitions,
        args.seed,
        options={
            'nodes': bench.parse_sweep(args.nodes) if args.nodes else [],
            'fixed_nodes': args.fixed_nodes,
            'fixed_records': args.fixed_records
        }
    )
    rows = bench.run(spec, _schedules(args))
    _emit(rows, args)
    for series in ("records", "nodes"):
        points = [r for r in rows if r.series == series]
        if len(points) > 1:
            _, _, r2 = bench.linear_fit([r.parameter for r in points], [r.median for r in points])
            print(f"{series} sweep linear fit R^2 = {r2:.4f}")
    return EXIT_OK

##########
# Parser #
##########

def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rbacchain",
        description="Blockchain-backed role-based access control"
    )
    parser.add_argument("--verbose", action="store_true", help="Render structured logs onto stderr")
    parser.add_argument("--gas-config", default=None, help="Gas schedule JSON file")
    commands = parser.add_subparsers(dest="command", required=True)

    keygen = commands.add_parser("keygen", help="Generate an Ed25519 keyfile")
    keygen.add_argument("--name", default="", help="Human readable actor name")
    keygen.add_argument("--out", required=True, help="Destination keyfile")
    keygen.set_defaults(handler=cmd_keygen)

    policy = commands.add_parser("policy", help="Policy files").add_subparsers(dest="action", required=True)
    validate = policy.add_parser("validate", help="Validate a policy JSON file")
    validate.add_argument("policy")
    validate.set_defaults(handler=cmd_policy_validate)

    contract = commands.add_parser("contract", help="Smart contracts").add_subparsers(dest="action", required=True)
    compile_ = contract.add_parser("compile", help="Compile a policy into a contract")
    compile_.add_argument("policy")
    compile_.add_argument("--owner", required=True, help="Data owner keyfile")
    compile_.add_argument("--version", type=int, default=1)
    compile_.add_argument("--out", required=True, help="Destination contract file")
    compile_.set_defaults(handler=cmd_contract_compile)
    inspect = contract.add_parser("inspect", help="Describe a compiled contract")
    inspect.add_argument("contract")
    inspect.set_defaults(handler=cmd_contract_inspect)

    chain = commands.add_parser("chain", help="Persisted chains").add_subparsers(dest="action", required=True)
    verify = chain.add_parser("verify", help="Verify a chain file")
    verify.add_argument("chain")
    verify.set_defaults(handler=cmd_chain_verify)
    export = chain.add_parser("export", help="Dump a chain file as JSON")
    export.add_argument("chain")
    export.add_argument("--json", action="store_true", help="JSON output (the only format)")
    export.add_argument("--out", default=None)
    export.set_defaults(handler=cmd_chain_export)

    data = commands.add_parser("data", help="On-chain records").add_subparsers(dest="action", required=True)
    ingest = data.add_parser("ingest", help="Ingest a JSON-lines record file")
    ingest.add_argument("records")
    ingest.add_argument("--owner", required=True, help="Data owner keyfile")
    ingest.add_argument("--chain", required=True, help="Chain file to extend")
    ingest.set_defaults(handler=cmd_data_ingest)
    query = data.add_parser(
        "query",
        help="Offline inspection of a chain file as a registered user",
        description=(
            "Offline inspection: evaluates a query against a local chain file. No Tx_V is "
            "mined and the rows are unsigned; use `fabric request` for a served request."
        )
    )
    query.add_argument("query", help="att=val,att=val")
    query.add_argument("--user", required=True, help="User keyfile")
    query.add_argument("--chain", required=True, help="Chain file to query")
    query.set_defaults(handler=cmd_data_query)

    fabric = commands.add_parser("fabric", help="Simulated node fabric").add_subparsers(dest="action", required=True)
    up = fabric.add_parser("up", help="Bring a fabric up and provision it")
    up.add_argument("--config", required=True, help="Deployment JSON file")
    up.set_defaults(handler=cmd_fabric_up)
    request = fabric.add_parser("request", help="Serve one end-to-end request")
    request.add_argument("--config", required=True, help="Deployment JSON file")
    request.add_argument("--user", required=True, help="User keyfile")
    request.add_argument("--query", required=True, help="att=val,att=val")
    request.set_defaults(handler=cmd_fabric_request)

    benchmarks = commands.add_parser("bench", help="Benchmarks").add_subparsers(dest="action", required=True)

    def add_bench(name: str, help_text: str, handler) -> argparse.ArgumentParser:
        sub = benchmarks.add_parser(name, help=help_text)
        sub.add_argument("--out", default=None, help="CSV destination")
        sub.add_argument("--seed", type=int, default=BENCH_SEED)
        sub.add_argument("--repetitions", type=int, default=BENCH_REPETITIONS)
        sub.add_argument("--gas-config", default=argparse.SUPPRESS, help="Gas schedule JSON file")
        sub.set_defaults(handler=handler)
        return sub

    gas = add_bench("gas", "Deployment gas per role count", cmd_bench_gas)
    gas.add_argument("--roles", default="1..5")
    curve = gas.add_mutually_exclusive_group()
    curve.add_argument("--baseline", action="store_true", help="Use the baseline schedule")
    curve.add_argument("--compare", action="store_true", help="Both schedules plus ratios")

    requests = add_bench("requests", "Drain time of concurrent requests", cmd_bench_requests)
    requests.add_argument("--counts", default="100,200,300")
    requests.add_argument(
        "--latency",
        default="fixed:0",
        help="Per-link delay, fixed:<ms> or uniform:<low_ms>:<high_ms>"
    )

    rights = add_bench("rights", "Deployment vs verification time", cmd_bench_rights)
    rights.add_argument("--max", type=int, default=20)

    chain_bench = add_bench("chain", "Chain generation and replication", cmd_bench_chain)
    chain_bench.add_argument("--records", default="10000..50000")
    chain_bench.add_argument("--nodes", default="2..20:2")
    chain_bench.add_argument("--fixed-nodes", type=int, default=4)
    chain_bench.add_argument("--fixed-records", type=int, default=10000)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_arg_parser().parse_args(argv)
    args.logging_variant = "console" if args.verbose else None
    if args.verbose:
        configure_logging("console")
    try:
        return args.handler(args)
    except (RbacChainError, RLPException, OSError, ValueError) as error:
        print(f"error: {error}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
