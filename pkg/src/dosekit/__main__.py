from dosekit.cli import main

main()
