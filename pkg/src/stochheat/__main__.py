from stochheat.cli import entry

entry()
