"""Regenerate the fixture corpus descriptor files in canonical form."""

import pathlib

from collusionscan.app_model import (
    AppDescriptor,
    Channel,
    ChannelKind,
    serialize_descriptor,
)
from collusionscan.ir import Call, CallRet, Const, MethodIR, Return

SP = ChannelKind.SharedPreferences
IN = ChannelKind.Intent

DOCSTORE = Channel(SP, "docstore.xml:com.cdx.collector")
SHARE_FILE = Channel(IN, "com.share.FILE")
SHARE_TEXT = Channel(IN, "com.share.TEXT")
SHARE_URI = Channel(IN, "com.share.URI")
BOT_CMD = Channel(IN, "com.botnet.COMMAND")
BOT_REPORT = Channel(IN, "com.botnet.REPORT")
LOCSTEAL = Channel(IN, "locsteal")


def method_12():
    return MethodIR(
        app_id="12",
        name="main",
        params=("p1",),
        body=(
            Call("readSecret", ("p1",)),
            CallRet("r1", "readSecret"),
            Call("sendBroadcast", ('"locsteal"', "r1")),
            Return(),
        ),
    )


def method_13():
    return MethodIR(
        app_id="13",
        name="main",
        params=("p1",),
        body=(
            Const("r1", 0),
            Call("getBroadcast", ("r1", "r1", '"locsteal"', "p1")),
            CallRet("r2", "getBroadcast"),
            Call("publish", ("r2",)),
            Return(),
        ),
    )


def method_14():
    return MethodIR(
        app_id="14",
        name="main",
        params=("p1",),
        body=(
            Const("r1", 0),
            Call("getBroadcast", ("r1", "r1", '"locsteal"', "p1")),
            CallRet("r2", "getBroadcast"),
            Const("r3", 0),
            Call("publish", ("r3",)),
            Return(),
        ),
    )


APPS = [
    # Document Extractor set: 1 collects documents (external storage and
    # shared files) into a prefs registry, 2 uploads the registry.
    AppDescriptor(
        id="1",
        package="com.cdx.collector",
        permissions=frozenset({"READ_EXTERNAL_STORAGE"}),
        sends=(DOCSTORE,),
        receives=(SHARE_FILE,),
    ),
    AppDescriptor(
        id="2",
        package="com.cdx.uploader",
        permissions=frozenset({"INTERNET"}),
        receives=(DOCSTORE,),
    ),
    # Botnet set: relay 3 talks to the C&C server and broadcasts commands;
    # 4 sends SMS, 5 harvests contacts (and leaks them on the generic text
    # share action), 6 kills tasks and reports status back to the relay.
    AppDescriptor(
        id="3",
        package="com.botnet.relay",
        permissions=frozenset({"INTERNET"}),
        sends=(BOT_CMD,),
        receives=(BOT_REPORT,),
    ),
    AppDescriptor(
        id="4",
        package="com.botnet.smsbot",
        permissions=frozenset({"SEND_SMS"}),
        receives=(BOT_CMD,),
    ),
    AppDescriptor(
        id="5",
        package="com.botnet.contactbot",
        permissions=frozenset({"READ_CONTACTS", "CAMERA"}),
        sends=(SHARE_TEXT,),
        receives=(BOT_CMD,),
    ),
    AppDescriptor(
        id="6",
        package="com.botnet.taskbot",
        permissions=frozenset({"GET_TASKS", "KILL_BACKGROUND_PROCESSES"}),
        sends=(BOT_REPORT,),
        receives=(BOT_CMD,),
    ),
    # Contact Extractor set: 7 reads the address book and shares the dump
    # as a file broadcast, 8 archives shared files to external storage,
    # 9 uploads whatever appears on external storage.
    AppDescriptor(
        id="7",
        package="com.cex.reader",
        permissions=frozenset({"READ_CONTACTS"}),
        sends=(SHARE_FILE,),
    ),
    AppDescriptor(
        id="8",
        package="com.cex.forwarder",
        permissions=frozenset({"WRITE_EXTERNAL_STORAGE"}),
        receives=(SHARE_FILE,),
    ),
    AppDescriptor(
        id="9",
        package="com.cex.uploader",
        permissions=frozenset({"READ_EXTERNAL_STORAGE", "INTERNET"}),
    ),
    # Clean apps: 10 views shared documents (prefs registry, file and text
    # shares) and re-shares URIs over Bluetooth-capable viewer; 11 receives
    # any shared content and uploads it; 14 shows received locations and
    # can beam them over NFC.
    AppDescriptor(
        id="10",
        package="com.clean.docviewer",
        permissions=frozenset({"BLUETOOTH"}),
        sends=(SHARE_URI,),
        receives=(DOCSTORE, SHARE_FILE, SHARE_TEXT),
    ),
    AppDescriptor(
        id="11",
        package="com.clean.sharer",
        permissions=frozenset({"INTERNET"}),
        receives=(SHARE_FILE, SHARE_TEXT, SHARE_URI),
    ),
    # Location Stealing set: 12 reads the GPS location and broadcasts it,
    # 13 publishes the received location on the internet.
    AppDescriptor(
        id="12",
        package="com.loc.reader",
        permissions=frozenset({"ACCESS_FINE_LOCATION"}),
        sends=(LOCSTEAL,),
        methods=(method_12(),),
    ),
    AppDescriptor(
        id="13",
        package="com.loc.uploader",
        permissions=frozenset({"INTERNET"}),
        receives=(LOCSTEAL,),
        methods=(method_13(),),
    ),
    AppDescriptor(
        id="14",
        package="com.clean.locviewer",
        permissions=frozenset({"NFC"}),
        receives=(LOCSTEAL,),
        methods=(method_14(),),
    ),
]


def main():
    out_dir = pathlib.Path(__file__).resolve().parents[1] / "src/collusionscan/data/corpus"
    out_dir.mkdir(parents=True, exist_ok=True)
    for app in APPS:
        path = out_dir / f"app{int(app.id):02d}.json"
        path.write_text(serialize_descriptor(app), encoding="utf-8")
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
